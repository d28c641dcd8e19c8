"""Independent reference values for the closed-form models.

Every formula is re-derived here from its textbook statement and evaluated
with 50-digit arithmetic; the Rust acceptance test compares the library
against the JSON this script writes. Regenerate with

    python3 tools/oracle.py > crates/core/tests/fixtures/oracle.json
"""

import json
import math

from mpmath import mp, mpf, sqrt, log, exp, sin, atan, pi, degrees

mp.dps = 50

# default constants (mirrors the documented configuration defaults)
FC = mpf("2e9")
C = mpf("299792458")
LOS_A, LOS_B = mpf("9.61"), mpf("0.16")
H_LOS, H_NLOS = mpf(1), mpf("0.2")
B_G, B_U = mpf("10e6"), mpf("40e6")
NOISE_W = mpf("1e-13")
P_TX = mpf(5)

ROTOR = dict(W=mpf(20), n=mpf(4), rho=mpf("1.225"), A=mpf("0.05"), CT=mpf("0.1"),
             delta=mpf("0.01"), s=mpf("0.05"), k=mpf("0.1"), Spar=mpf("0.01"), Sperp=mpf("0.02"))
ROTOR["v0"] = sqrt(ROTOR["W"] / (2 * ROTOR["n"] * ROTOR["rho"] * ROTOR["A"]))

HEAVY = dict(W=mpf(35), n=mpf(6), rho=mpf("1.2"), A=mpf("0.08"), CT=mpf("0.12"),
             delta=mpf("0.012"), s=mpf("0.06"), k=mpf("0.12"), Spar=mpf("0.015"), Sperp=mpf("0.03"))
HEAVY["v0"] = sqrt(HEAVY["W"] / (2 * HEAVY["n"] * HEAVY["rho"] * HEAVY["A"]))

LIGHT = dict(W=mpf(9), n=mpf(4), rho=mpf("1.1"), A=mpf("0.03"), CT=mpf("0.08"),
             delta=mpf("0.009"), s=mpf("0.04"), k=mpf("0.08"), Spar=mpf("0.006"), Sperp=mpf("0.012"))
LIGHT["v0"] = sqrt(LIGHT["W"] / (2 * LIGHT["n"] * LIGHT["rho"] * LIGHT["A"]))


def fspl(d):
    return (4 * pi * FC * d / C) ** 2


def p_los(theta_deg):
    return 1 / (1 + LOS_A * exp(-LOS_B * (theta_deg - LOS_A)))


def geometry(uav, node):
    dx, dy, dz = (mpf(uav[i]) - mpf(node[i]) for i in range(3))
    horiz = sqrt(dx * dx + dy * dy)
    d = sqrt(dx * dx + dy * dy + dz * dz)
    theta = mpf(90) if horiz == 0 else degrees(atan(abs(dz) / horiz))
    return d, theta


def gain_u2g(uav, node):
    d, theta = geometry(uav, node)
    p = p_los(theta)
    return (p * H_LOS + (1 - p) * H_NLOS) / fspl(d)


def rate_u2g(uav, node):
    snr = P_TX * gain_u2g(uav, node) / NOISE_W
    return B_G * log(1 + snr, 2)


def rate_u2u(a, b):
    d, _ = geometry(a, b)
    snr = P_TX / fspl(d) / NOISE_W
    return B_U * log(1 + snr, 2)


def blade(r):
    return r["W"] ** mpf("1.5") / sqrt(r["n"] * r["rho"] * r["A"]) * r["CT"] ** mpf("-1.5") * r["delta"] / 8 * r["s"]


def induced(r):
    return r["W"] ** mpf("1.5") / sqrt(2 * r["n"] * r["rho"] * r["A"]) * (1 + r["k"])


def hover(r):
    return blade(r) + induced(r)


def cruise(r, v):
    v = mpf(v)
    return (blade(r)
            + mpf(3) / 8 * r["delta"] * sqrt(r["W"] * r["n"] * r["rho"] * r["A"] / r["CT"]) * r["s"] * v ** 2
            + induced(r) * sqrt(sqrt(1 + v ** 4 / (4 * r["v0"] ** 4)) - v ** 2 / (2 * r["v0"] ** 2))
            + r["n"] / 2 * r["Spar"] * r["rho"] * v ** 3)


def vertical(r, v, sign):
    v = mpf(v)
    drag = r["n"] / 4 * r["Sperp"] * r["rho"]
    return (r["W"] * v / 2 + sign * drag * v ** 3
            + (r["W"] / 2 + sign * drag * v ** 2)
            * sqrt((1 + sign * r["Sperp"] / r["A"]) * v ** 2 + 2 * r["W"] / (r["n"] * r["rho"] * r["A"])))


# default airframe kinematics
V_CRUISE, V_LOW, V_UP, V_DOWN = mpf(15), mpf(5), mpf(3), mpf(3)
Z_MIN, Z_MAX = mpf(50), mpf(100)


def task_energy(cls, dwell, size_bytes, rate_bps):
    band = Z_MAX - Z_MIN
    up, down = vertical(ROTOR, V_UP, 1), vertical(ROTOR, V_DOWN, -1)
    if cls == 1:
        return down * band / V_DOWN + cruise(ROTOR, V_LOW) * mpf(dwell) + up * band / V_UP
    if cls == 2:
        # edge nodes are on the ground: full descent from cruise altitude
        return down * Z_MAX / V_DOWN + hover(ROTOR) * mpf(size_bytes) * 8 / mpf(rate_bps) + up * Z_MAX / V_UP
    return down * band / V_DOWN + cruise(ROTOR, V_CRUISE) * mpf(dwell) + up * band / V_UP


def arc(theta):
    return mpf(1) if theta == 0 else theta / (2 * sin(theta / 2))


def angle(load_n, load_m):
    return max(mpf(0), log(mpf(load_n) / mpf(load_m)) - 1)


def reward(items, rate, mu, omega, eps, phi):
    total = mpf(0)
    for cr, prio, e in items:
        total += mpf(rate) * (mpf(mu) * (exp(mpf(omega) * mpf(cr)) - 1) / 3 * prio - mpf(eps) * mpf(e)) * mpf(phi)
    return total


def entropy(p):
    return -sum(mpf(x) * log(mpf(x)) for x in p if x > 0)


def softmax(z):
    m = max(z)
    e = [exp(mpf(x) - m) for x in z]
    s = sum(e)
    return [x / s for x in e]


def joint(n_uavs, n_actions):
    if n_uavs == 0:
        yield ()
        return
    for head in joint(n_uavs - 1, n_actions):
        for a in range(n_actions):
            yield head + (a,)


def q_of(table, n_actions, action):
    return sum(mpf(table[u * n_actions + a]) for u, a in enumerate(action))


def policy(logits, n_uavs, n_actions):
    return [softmax(logits[u * n_actions:(u + 1) * n_actions]) for u in range(n_uavs)]


def soft_target(fx, reward_, done, gamma, alpha):
    if done:
        return mpf(reward_)
    pis = policy(fx["logits"], fx["n_uavs"], fx["n_actions"])
    v = mpf(0)
    for a in joint(fx["n_uavs"], fx["n_actions"]):
        prob = mpf(1)
        for u, au in enumerate(a):
            prob *= pis[u][au]
        m = min(q_of(fx["q1"], fx["n_actions"], a), q_of(fx["q2"], fx["n_actions"], a))
        v += prob * (m - alpha * log(prob))
    return mpf(reward_) + gamma * v


def actor_loss(fx, alpha):
    pis = policy(fx["logits"], fx["n_uavs"], fx["n_actions"])
    total = mpf(0)
    for a in joint(fx["n_uavs"], fx["n_actions"]):
        prob = mpf(1)
        for u, au in enumerate(a):
            prob *= pis[u][au]
        m = min(q_of(fx["q1"], fx["n_actions"], a), q_of(fx["q2"], fx["n_actions"], a))
        total += prob * (alpha * log(prob) - m)
    return total


def worst_gap(i0, lam, t0):
    return mpf(i0) * exp(-mpf(lam) * t0)


def expected_gap(i0, lam, t0, p, k):
    q = (1 - mpf(p)) ** (k - 1)
    return sum(mp.binomial(t0, n) * q ** n * (1 - q) ** (t0 - n) * mpf(i0) * exp(-mpf(lam) * n) for n in range(t0 + 1))


def f(x):
    return float(x)


FIXTURES = [
    dict(n_uavs=1, n_actions=3, logits=[0.4, -0.2, 1.1], q1=[1.0, 2.5, -0.5], q2=[1.2, 2.0, -0.4]),
    dict(n_uavs=2, n_actions=2, logits=[0.3, -0.3, 1.0, 0.0], q1=[0.5, 1.5, -1.0, 2.0], q2=[0.7, 1.1, -0.2, 1.4]),
    dict(n_uavs=2, n_actions=3, logits=[0.0, 0.5, -0.5, 0.2, 0.2, -1.0], q1=[1, 0, 2, 0.5, -0.5, 1.5],
         q2=[0.8, 0.3, 1.6, 0.9, -0.7, 1.2]),
]


def main():
    cases = []

    def add(name, args, value, rel=1e-9):
        cases.append(dict(name=name, args=args, expected=f(value), rel_tol=rel))

    for d in ["1", "100", "1234.5"]:
        add("path_loss_u2g", dict(d=float(d)), fspl(mpf(d)))
    for th in ["10", "45", "80"]:
        add("p_los", dict(theta=float(th)), p_los(mpf(th)))
    pairs = [([0, 0, 100], [0, 0, 0]), ([300, 400, 100], [0, 0, 0]), ([1000, 250, 60], [100, 50, 0])]
    for uav, node in pairs:
        add("gain_u2g", dict(uav=uav, node=node), gain_u2g(uav, node), 1e-6)
        add("rate_u2g", dict(uav=uav, node=node), rate_u2g(uav, node), 1e-6)
    for a, b in [([0, 0, 100], [50, 0, 100]), ([0, 0, 80], [120, 160, 100]), ([10, 10, 50], [900, 400, 100])]:
        add("rate_u2u", dict(a=a, b=b), rate_u2u(a, b), 1e-6)

    gamma = {1: mpf(13824), 2: mpf(13824), 3: mpf(1000)}
    for cls, size, beta in [(1, 150e6, 1.0), (2, 400e6, 0.5), (3, 5e6, 0.25)]:
        add("task_flops", dict(cls=cls, size=size, beta=beta), mpf(beta) * gamma[cls] * mpf(size))
    for cores, hz, eta in [(4, 1.8e9, 4), (8, 2.4e9, 8), (1, 1e9, 1)]:
        add("capacity", dict(cores=cores, hz=hz, eta=eta), mpf(cores) * mpf(hz) * mpf(eta))
    for flops in [0.0, 2.88e10, 1.0368e12]:
        add("delay", dict(flops=flops), mpf(flops) / (4 * mpf("1.8e9") * 4) + mpf("0.5"))

    for a, b in [([0, 0, 100], [30, 40, 0]), ([5, 5, 50], [5, 5, 80]), ([100, 200, 100], [400, 600, 100])]:
        dx, dy, dz = (mpf(b[i]) - mpf(a[i]) for i in range(3))
        add("distance_u2t", dict(a=a, b=b), sqrt(dx * dx + dy * dy) + abs(dz))

    for name, r in [("default", ROTOR), ("heavy", HEAVY), ("light", LIGHT)]:
        add("hover_power", dict(rotor=name), hover(r))
    for name, r, v in [("default", ROTOR, 5), ("default", ROTOR, 15), ("heavy", HEAVY, 12), ("light", LIGHT, 8), ("default", ROTOR, 0)]:
        add("cruise_power", dict(rotor=name, v=v), cruise(r, v))
    for name, r, v in [("default", ROTOR, 1), ("default", ROTOR, 3), ("heavy", HEAVY, 2)]:
        add("ascent_power", dict(rotor=name, v=v), vertical(r, v, 1))
        add("descent_power", dict(rotor=name, v=v), vertical(r, v, -1))

    for cls, dwell, size, rate in [(1, 90, 150e6, 0), (1, 60, 100e6, 0), (1, 120, 200e6, 0),
                                   (2, 0, 400e6, 2.0e7), (2, 0, 300e6, 5.5e7), (2, 0, 500e6, 1.0e8),
                                   (3, 5, 5e6, 0), (3, 2, 1e6, 0), (3, 10, 10e6, 0)]:
        add("task_energy", dict(cls=cls, dwell=dwell, size=size, rate=rate), task_energy(cls, dwell, size, rate))

    for k, r, tau in [(1.0, 0.5, 2.0), (3.0, 1.2, 0.5), (0.7, 0.0, 1.0)]:
        add("task_value", dict(k=k, r=r, tau=tau), mpf(k) * (1 + mpf(r) ** mpf(tau)))

    for ln, lm in [(1.0, 1.0), (50.0, 2.0), (7.5e20, 1.0e20), (3.0e22, 1.0e21)]:
        add("curve_angle", dict(load_n=ln, load_m=lm), angle(ln, lm))
    for d, ln, lm in [(100.0, 1.0, 1.0), (250.0, 60.0, 2.0), (80.0, 3.0e22, 1.0e21)]:
        add("curved_length", dict(d=d, load_n=ln, load_m=lm), mpf(d) * arc(angle(ln, lm)))

    rw = [
        dict(items=[[1.0, 3, 100.0]], rate=0.5, mu=1.0, omega=1.0, eps=1e-5, phi=1.0),
        dict(items=[[0.4, 2, 50.0], [1.0, 1, 10.0]], rate=0.25, mu=2.0, omega=0.5, eps=1e-3, phi=1.5),
        dict(items=[[0.0, 3, 0.0], [0.75, 3, 2000.0]], rate=1.0, mu=1.0, omega=2.0, eps=1e-4, phi=0.8),
    ]
    for c in rw:
        add("reward", c, reward(c["items"], c["rate"], c["mu"], c["omega"], c["eps"], c["phi"]))

    for p in [[0.7, 0.3], [0.25, 0.25, 0.25, 0.25], [0.5, 0.3, 0.2, 0.0]]:
        add("entropy", dict(p=p), entropy(p))

    gamma_, alpha_ = mpf("0.9"), mpf("0.2")
    for i, fx in enumerate(FIXTURES):
        add("soft_target", dict(fixture=fx, reward=1.0, done=False, gamma=0.9, alpha=0.2),
            soft_target(fx, 1.0, False, gamma_, alpha_))
        add("actor_loss", dict(fixture=fx, alpha=0.2), actor_loss(fx, alpha_))
        acts = list(joint(fx["n_uavs"], fx["n_actions"]))[: 3]
        targets = [0.5, -1.0, 2.0]
        loss = sum((q_of(fx["q1"], fx["n_actions"], a) - mpf(t)) ** 2 for a, t in zip(acts, targets)) / len(acts)
        add("critic_loss", dict(fixture=fx, actions=[list(a) for a in acts], targets=targets), loss)
    add("soft_target", dict(fixture=FIXTURES[0], reward=1.0, done=True, gamma=0.9, alpha=0.2), mpf(1))

    for i0, lam, t0 in [(1.0, 0.1, 10), (2.5, 0.05, 4), (1.0, 0.0, 7)]:
        add("worst_case_gap", dict(i0=i0, lam=lam, t0=t0), worst_gap(i0, lam, t0))
    for i0, lam, t0, p, k in [(1.0, 0.1, 2, 0.5, 2), (1.0, 0.1, 10, 0.2, 4), (3.0, 0.3, 6, 0.9, 3)]:
        add("expected_gap", dict(i0=i0, lam=lam, t0=t0, p=p, k=k), expected_gap(i0, lam, t0, p, k))

    print(json.dumps(dict(cases=cases), indent=1))


if __name__ == "__main__":
    main()
