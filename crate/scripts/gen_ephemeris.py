"""Generate crates/core/data/solar_system_j2000.csv.

States come from the approximate J2000 Keplerian elements of the planets
(a [AU], e, I, L, longitude of perihelion, longitude of ascending node [deg],
ecliptic frame). Each planet is placed on its heliocentric two-body orbit with
mu = k^2 (1 + m), then the whole system is shifted to the barycentre.
Units: AU, days, solar masses.
"""

import math
import sys

K2 = 0.01720209895 ** 2

# name, mass [M_sun], a, e, I, L, varpi, Omega
PLANETS = [
    ("mercury", 1.6601e-7, 0.38709927, 0.20563593, 7.00497902, 252.25032350, 77.45779628, 48.33076593),
    ("venus", 2.4478e-6, 0.72333566, 0.00677672, 3.39467605, 181.97909950, 131.60246718, 76.67984255),
    ("earth", 3.0404e-6, 1.00000261, 0.01671123, -0.00001531, 100.46457166, 102.93768193, 0.0),
    ("mars", 3.2272e-7, 1.52371034, 0.09339410, 1.84969142, -4.55343205, -23.94362959, 49.55953891),
    ("jupiter", 9.5479e-4, 5.20288700, 0.04838624, 1.30439695, 34.39644051, 14.72847983, 100.47390909),
    ("saturn", 2.8589e-4, 9.53667594, 0.05386179, 2.48599187, 49.95424423, 92.59887831, 113.66242448),
    ("uranus", 4.3662e-5, 19.18916464, 0.04725744, 0.77263783, 313.23810451, 170.95427630, 74.01692503),
    ("neptune", 5.1514e-5, 30.06992276, 0.00859048, 1.77004347, -55.12002969, 44.96476227, 131.78422574),
    ("pluto", 7.396e-9, 39.48211675, 0.24882730, 17.14001206, 238.92903833, 224.06891629, 110.30393684),
]


def kepler(m, e):
    E = m if e < 0.8 else math.pi
    for _ in range(100):
        d = (E - e * math.sin(E) - m) / (1.0 - e * math.cos(E))
        E -= d
        if abs(d) < 1e-15:
            break
    return E


def state(mass, a, e, inc, lon, varpi, node):
    inc, lon, varpi, node = (math.radians(v) for v in (inc, lon, varpi, node))
    w = varpi - node
    m = math.remainder(lon - varpi, 2.0 * math.pi)
    E = kepler(m, e)
    mu = K2 * (1.0 + mass)
    n = math.sqrt(mu / a**3)
    b = a * math.sqrt(1.0 - e * e)
    rate = n / (1.0 - e * math.cos(E))
    xp, yp = a * (math.cos(E) - e), b * math.sin(E)
    vxp, vyp = -a * math.sin(E) * rate, b * math.cos(E) * rate
    cw, sw, cn, sn, ci, si = math.cos(w), math.sin(w), math.cos(node), math.sin(node), math.cos(inc), math.sin(inc)
    rot = [
        [cw * cn - sw * sn * ci, -sw * cn - cw * sn * ci],
        [cw * sn + sw * cn * ci, -sw * sn + cw * cn * ci],
        [sw * si, cw * si],
    ]
    pos = [r[0] * xp + r[1] * yp for r in rot]
    vel = [r[0] * vxp + r[1] * vyp for r in rot]
    return pos, vel


def main(out):
    bodies = [("sun", 1.0, [0.0] * 3, [0.0] * 3)]
    for name, mass, *el in PLANETS:
        pos, vel = state(mass, *el)
        bodies.append((name, mass, pos, vel))
    total = sum(b[1] for b in bodies)
    cm = [sum(b[1] * b[2][k] for b in bodies) / total for k in range(3)]
    cv = [sum(b[1] * b[3][k] for b in bodies) / total for k in range(3)]
    with open(out, "w") as f:
        f.write("name,mass,x,y,z,vx,vy,vz\n")
        f.write("# J2000 ecliptic, barycentric; AU, AU/day, solar masses\n")
        for name, mass, pos, vel in bodies:
            vals = [mass] + [p - c for p, c in zip(pos, cm)] + [v - c for v, c in zip(vel, cv)]
            f.write(name + "," + ",".join(repr(v) for v in vals) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/solar_system_j2000.csv")
