"""Writes tests/data/fit_fixture.csv and its golden values.

Independent of the C++ code: weights are built from their definitions,
roots come from scipy, Jacobians from jax, and the small-sample correction
uses the explicit T x T hat matrix instead of the Woodbury form. The
GEE roots solve their score equations directly, with the exchangeable
correlation re-estimated by moments until it settles.
"""
import json
import pathlib

import jax
import jax.numpy as jnp
import numpy as np
import pandas as pd
import scipy.optimize as so
import scipy.stats as st
import statsmodels.api as sm

jax.config.update("jax_enable_x64", True)

HERE = pathlib.Path(__file__).resolve().parent
DATA = HERE.parent / "data"
N, T, DELTA = 8, 4, 2


def make_fixture():
    rng = np.random.default_rng(20240611)
    rows = []
    for i in range(N):
        pid = f"p{i + 1}"
        for t in range(T):
            avail = int(rng.random() < 0.85)
            x = round(float(rng.normal()), 1)
            u = round(float(rng.normal()), 1)
            p = round(float(np.clip(1 / (1 + np.exp(-(0.1 + 0.6 * x))), 0.25, 0.75)), 2)
            a = int(avail and rng.random() < p)
            r = int(rng.random() < 0.15 + 0.15 * a + 0.05 * (x > 0))
            rows.append(dict(id=pid, decision_point=t + 1, available=avail, treatment=a,
                             rand_prob=p if avail else 0.0, sub_outcome=r, mod_x=x, ctl_u=u))
        for s in range(DELTA):
            rows.append(dict(id=pid, decision_point=T + s + 1, available="NA", treatment="NA",
                             rand_prob="NA", sub_outcome=int(rng.random() < 0.2), mod_x="NA", ctl_u="NA"))
    df = pd.DataFrame(rows)
    df.to_csv(DATA / "fit_fixture.csv", index=False)
    return df


def arrays(df):
    dec = df[df.available != "NA"].copy()
    dec["available"] = dec.available.astype(int)
    dec["treatment"] = dec.treatment.astype(int)
    dec["rand_prob"] = dec.rand_prob.astype(float)
    dec["mod_x"] = dec.mod_x.astype(float)
    dec["ctl_u"] = dec.ctl_u.astype(float)
    sub = {pid: g.sub_outcome.astype(int).to_numpy() for pid, g in df.groupby("id", sort=False)}
    return dec, sub


def weights(dec, sub, full):
    y, w = [], []
    for pid, g in dec.groupby("id", sort=False):
        a = g.treatment.to_numpy()
        avail = g.available.to_numpy()
        p = g.rand_prob.to_numpy()
        r = sub[pid]
        for d in range(len(g)):
            window = r[d:d + DELTA]
            y.append(int(window.max()))
            prod = 1.0
            for s in range(1, DELTA):
                j = d + s
                if j >= len(g) or not avail[j]:
                    continue
                include = full or window[:s].max() == 0
                if include:
                    prod *= (0.0 if a[j] else 1.0 / (1.0 - p[j]))
            w.append(prod)
    return np.array(y, float), np.array(w)


def numerator(dec):
    av = dec[dec.available == 1]
    model = sm.Logit(av.treatment.to_numpy(), sm.add_constant(av.mod_x.to_numpy())).fit(disp=0, tol=1e-14,
                                                                                          maxiter=200)
    pt = np.zeros(len(dec))
    mask = dec.available.to_numpy() == 1
    pt[mask] = model.predict(sm.add_constant(dec.mod_x.to_numpy()[mask]))
    return pt


def emee_fit(dec, sub, full):
    y, w = weights(dec, sub, full)
    pt = numerator(dec)
    A = dec.treatment.to_numpy().astype(float)
    I = dec.available.to_numpy().astype(float)
    p = dec.rand_prob.to_numpy()
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(I == 1, np.where(A == 1, pt / p, (1 - pt) / (1 - p)), 0.0)
    r = I * m * w
    G = np.column_stack([np.ones(len(dec)), dec.ctl_u.to_numpy()])
    S = np.column_stack([np.ones(len(dec)), dec.mod_x.to_numpy()])
    ids = dec.id.to_numpy()
    groups = [np.where(ids == pid)[0] for pid in pd.unique(ids)]
    q = G.shape[1]

    def rows_u(theta):
        al, be = theta[:q], theta[q:]
        resid = y * jnp.exp(-A * (S @ be)) - jnp.exp(G @ al)
        X = jnp.column_stack([G, (A - pt)[:, None] * S])
        return (r * resid)[:, None] * X

    def ubar(theta):
        return rows_u(theta).sum(0) / len(groups)

    sol = so.root(lambda th: np.asarray(ubar(jnp.array(th))), np.zeros(4), jac=lambda th: np.asarray(
        jax.jacfwd(ubar)(jnp.array(th))), method="hybr", options={"xtol": 1e-14})
    theta = jnp.array(sol.x)
    assert np.max(np.abs(ubar(theta))) < 1e-12

    bread = np.asarray(jax.jacfwd(ubar)(theta))
    R = np.asarray(rows_u(theta))
    U = np.array([R[g].sum(0) for g in groups])

    al, be = theta[:q], theta[q:]
    mu = np.asarray(jnp.exp(G @ al + A * (S @ be)))
    X = np.column_stack([G, (A - pt)[:, None] * S])
    B = (r * np.exp(-A * np.asarray(S @ be)))[:, None] * X  # per-row multipliers
    D = mu[:, None] * np.column_stack([G, A[:, None] * S])  # d mu / d theta
    eps = y - mu
    total = sum(B[g].T @ D[g] for g in groups)
    Ua = []
    for g in groups:
        H = D[g] @ np.linalg.solve(total, B[g].T)
        Ua.append(B[g].T @ np.linalg.solve(np.eye(len(g)) - H, eps[g]))
    Ua = np.array(Ua)

    n = len(groups)
    binv = np.linalg.inv(bread)

    def sandwich(scores):
        v = binv @ (scores.T @ scores / n) @ binv.T / n
        return (v + v.T) / 2

    v_un, v_adj = sandwich(U), sandwich(Ua)
    df = n - 4
    crit = st.t.ppf(0.975, df)
    se = np.sqrt(np.diag(v_adj)[q:])
    b = np.asarray(be)
    return dict(alpha=np.asarray(al).tolist(), beta=b.tolist(), se=se.tolist(),
                ci_low=(b - crit * se).tolist(), ci_high=(b + crit * se).tolist(),
                p_value=(2 * st.t.sf(np.abs(b / se), df)).tolist(),
                vcov_unadjusted=v_un.tolist(), vcov_adjusted=v_adj.tolist(), df=df)


def gee_fit(dec, sub, exchangeable):
    # Marginal mean exp(a0 + a1 u + b0 A); the richer A*x model has no
    # interior root on this panel (a fitted mean exceeds one).
    y, _ = weights(dec, sub, False)
    av = dec.available.to_numpy() == 1
    ids = dec.id.to_numpy()[av]
    A = dec.treatment.to_numpy()[av]
    u = dec.ctl_u.to_numpy()[av]
    X = np.column_stack([np.ones(av.sum()), u, A])
    yy = y[av]
    clusters = [np.flatnonzero(ids == i) for i in pd.unique(ids)]
    k = X.shape[1]
    tmax = max(len(c) for c in clusters)

    def score(th, rho):
        mu = np.exp(X @ th)
        total = np.zeros(k)
        for c in clusters:
            m = mu[c]
            d = m[:, None] * X[c]
            v_half = np.diag(np.sqrt(m * (1 - m)))
            r = (1 - rho) * np.eye(len(c)) + rho * np.ones((len(c), len(c)))
            v = v_half @ r @ v_half
            total += d.T @ np.linalg.solve(v, yy[c] - m)
        return total

    def moment_rho(th):
        mu = np.exp(X @ th)
        e = (yy - mu) / np.sqrt(mu * (1 - mu))
        pairs = sum(len(c) * (len(c) - 1) / 2 for c in clusters)
        cross = sum((e[c].sum() ** 2 - (e[c] ** 2).sum()) / 2 for c in clusters)
        rho = (cross / (pairs - k)) / ((e ** 2).sum() / (len(e) - k))
        return float(np.clip(rho, -1 / (tmax - 1) + 1e-6, 0.99))

    th = np.array([np.log(yy.mean()), 0.0, 0.0])
    rho = 0.0
    for _ in range(200):
        sol = so.root(lambda t: score(t, rho), th, method="lm", options={"xtol": 1e-15, "ftol": 1e-15})
        th = sol.x
        assert np.max(np.abs(score(th, rho))) < 1e-10
        if not exchangeable:
            break
        new = moment_rho(th)
        if abs(new - rho) <= 1e-12:
            break
        rho = new
    assert np.max(np.exp(X @ th)) < 1 - 1e-6
    return dict(alpha=th[:2].tolist(), beta=th[2:].tolist(), rho=rho)


def main():
    df = make_fixture()
    dec, sub = arrays(df)
    golden = {"pd-emee": emee_fit(dec, sub, False), "emee": emee_fit(dec, sub, True), "gee-ind": gee_fit(dec, sub, False),
              "gee-exch": gee_fit(dec, sub, True)}
    (DATA / "fit_fixture_golden.json").write_text(json.dumps(golden, indent=2) + "\n")


if __name__ == "__main__":
    main()
