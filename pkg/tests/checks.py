"""Independent numerical checks shared by the unit tests and the acceptance run.

Nothing here calls the analytic gradient code it is checking: finite
differences and complex-step derivatives are computed from scalar losses.
"""
from contextlib import contextmanager

import numpy as np

from sawgrid import policy as P
from sawgrid.config import Hyperparams
from sawgrid.dataset import PolicyBatch, ValueBatch, generate_dataset
from sawgrid.env import N_ACTIONS, parse_maze
from sawgrid.value import ValueTable, gcivl_loss_and_grad

SMALL_MAZE = "....\n.#..\n...."
H = 1e-5

# criterion number -> (title, passed, detail), reported at the end of the session
RESULTS = {}


@contextmanager
def criterion(n, title):
    """Record whether the block passes; ``detail`` holds the measured numbers."""
    detail = {}
    try:
        yield detail
    except BaseException:
        RESULTS[n] = (title, False, _fmt_detail(detail))
        print(f"criterion {n} FAIL {title}: {_fmt_detail(detail)}")
        raise
    RESULTS[n] = (title, True, _fmt_detail(detail))
    print(f"criterion {n} PASS {title}: {_fmt_detail(detail)}")


def _fmt_detail(detail):
    return ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in detail.items())


def central_difference(f, x, h=H, only=None):
    """Central differences of ``f`` at ``x``; ``only`` restricts to flat indices."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in (range(flat.size) if only is None else only):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def random_problem(seed, batch=12):
    """A tiny maze, random tables and a random consistent batch."""
    rng = np.random.default_rng(seed)
    env = parse_maze(SMALL_MAZE)
    n = env.n_states
    vt = ValueTable(n)
    vt.v[...] = -rng.uniform(0, 5, size=(n, n))
    vt.v_target[...] = -rng.uniform(0, 5, size=(n, n))
    np.fill_diagonal(vt.v, 0.0)
    np.fill_diagonal(vt.v_target, 0.0)
    s = rng.integers(n, size=batch)
    a = rng.integers(N_ACTIONS, size=batch)
    b = PolicyBatch(s, a, env.next_state[s, a], rng.integers(n, size=batch),
                    rng.integers(n, size=batch), np.arange(batch))
    hp = Hyperparams(alpha=rng.uniform(0, 2), beta=rng.uniform(0, 2),
                     beta_high=rng.uniform(0, 2), beta_low=rng.uniform(0, 2),
                     beta_ris=rng.uniform(0, 5), tau=rng.uniform(0.5, 0.95))
    logits = {
        "flat": rng.normal(size=(n, n, N_ACTIONS)),
        "sub": rng.normal(size=(n, n, N_ACTIONS)),
        "high": rng.normal(size=(n, n, n)),
    }
    imagined = rng.integers(n, size=batch)
    return env, vt, b, hp, logits, imagined


def touched(x, rows):
    """Flat indices of the logit rows ``(s, c)`` a batch can reach."""
    idx = np.arange(x.size).reshape(x.shape)
    return np.unique(idx[rows[0], rows[1]].reshape(-1))


def _check_policy_loss(loss_grad, x, rows):
    """Differences over the reachable rows; the gradient must vanish elsewhere."""
    loss, grad = loss_grad(x)
    dense = grad.dense(x.shape)
    only = touched(x, rows)
    outside = np.ones(x.size, dtype=bool)
    outside[only] = False
    if np.any(dense.reshape(-1)[outside] != 0):
        return np.inf
    fd = central_difference(lambda y: loss_grad(y)[0], x, only=only)
    return rel_error(dense, fd)


def gradient_errors(seed):
    """Relative error of every analytic gradient against central differences."""
    env, vt, b, hp, L, imagined = random_problem(seed)
    out = {}

    vb = ValueBatch(b.s, b.a, b.s_next, b.g, b.pos)

    def value_loss(v):
        return gcivl_loss_and_grad(v, vt.v_target, vb, hp.tau, hp.gamma)[0]
    grad = gcivl_loss_and_grad(vt.v, vt.v_target, vb, hp.tau, hp.gamma)[1]
    out["gcivl"] = rel_error(grad, central_difference(value_loss, vt.v))

    sg, sw = (b.s, b.g), (b.s, b.w)
    out["gcbc"] = _check_policy_loss(lambda x: P.gcbc_loss_and_grad(x, b), L["flat"], sg)
    out["awr"] = _check_policy_loss(lambda x: P.awr_loss_and_grad(x, vt, env, b, hp),
                                    L["flat"], sg)

    def hiql(which):
        def f(x):
            hi, lo = (x, L["sub"]) if which == 0 else (L["high"], x)
            return P.hiql_losses_and_grads(hi, lo, vt, env, b, hp)[which]
        return f
    out["hiql"] = max(_check_policy_loss(hiql(0), L["high"], sg),
                      _check_policy_loss(hiql(1), L["sub"], sw))
    out["gcwae"] = _check_policy_loss(
        lambda x: P.gcwae_loss_and_grad(x, vt, env, b, imagined, hp), L["flat"], sg)
    out["ris"] = _check_policy_loss(
        lambda x: P.ris_loss_and_grad(x, L["sub"], vt, env, b, imagined, hp), L["flat"], sg)
    out["saw"] = _check_policy_loss(
        lambda x: P.saw_loss_and_grad(x, L["sub"], vt, env, b, hp), L["flat"], sg)
    return out


# -- subgoal enumeration identity ----------------------------------------------


def complex_step_kl_grad(theta, q_logits, h=1e-30):
    """Gradient of KL(softmax(theta) || softmax(q_logits)) by complex step."""
    theta = np.asarray(theta, dtype=float)
    lq = q_logits - q_logits.max()
    lq = lq - np.log(np.exp(lq).sum())
    grad = np.zeros_like(theta)
    for j in range(len(theta)):
        z = theta.astype(complex)
        z[j] += 1j * h
        z = z - theta.max()
        lp = z - np.log(np.exp(z).sum())
        kl = np.sum(np.exp(lp) * (lp - lq))
        grad[j] = kl.imag / h
    return grad


def enumeration_error(seed, k=2):
    """Compare the implemented SAW KL gradient at one (s, g) row, summed over the
    dataset's empirical k-step subgoal distribution, against Z times the
    expectation under the tilted subgoal posterior."""
    rng = np.random.default_rng(seed)
    env = parse_maze(SMALL_MAZE)
    n = env.n_states
    d = generate_dataset(env, "navigate", 6, 12, 0.5, seed=seed)
    s = int(d.states[d.flat_index[rng.integers(d.n_transitions)]])
    g = int(rng.integers(n))
    # every dataset position at state s, with its clamped k-step subgoal
    pos = d.flat_index[d.states[d.flat_index] == s]
    w = d.states[np.minimum(pos + k, d.end_of[pos])]
    batch = PolicyBatch(np.full(len(pos), s), d.actions[pos], d.states[pos + 1], w,
                        np.full(len(pos), g), pos)
    vt = ValueTable(n)
    vt.v[...] = -rng.uniform(0, 3, size=(n, n))
    np.fill_diagonal(vt.v, 0.0)
    flat = rng.normal(size=(n, n, N_ACTIONS))
    sub = rng.normal(size=(n, n, N_ACTIONS))
    hp = Hyperparams(beta=float(rng.uniform(0.5, 3.0)), w_max=1e300, saw_awr_term=False)
    _, grad = P.saw_loss_and_grad(flat, sub, vt, env, batch, hp)
    enumerated = grad.dense(flat.shape)[s, g]

    ws, counts = np.unique(w, return_counts=True)
    prior = counts / counts.sum()
    tilt = prior * np.exp(hp.beta * (vt.v[ws, g] - vt.v[s, g]))
    z = tilt.sum()
    q = tilt / z
    expected = z * sum(qi * complex_step_kl_grad(flat[s, g], sub[s, wi]) for qi, wi in zip(q, ws))
    return rel_error(enumerated, expected)


# -- reduction lattice ------------------------------------------------------------


def _flat_step(update, seed, **hp_changes):
    """Logits after one update from the shared random problem for ``seed``."""
    env, vt, b, hp, L, _ = random_problem(seed)
    hp = hp.replace(**hp_changes)
    n = env.n_states
    p = P.PolicyTable(n, "flat", L["flat"].copy())
    sub = P.PolicyTable(n, "sub", L["sub"])
    high = P.PolicyTable(n, "high", L["high"])
    update(p, sub, high, vt, env, b, hp, seed)
    return p.logits


def _gcwae_point_mass(p, sub, high, vt, env, b, hp, seed):
    n = env.n_states
    logits = np.full((n, n, n), -np.inf)
    logits[:, np.arange(n), np.arange(n)] = 0.0  # all mass on w = g
    point = P.PolicyTable(n, "high", logits)
    imagined = P.imagine_subgoals(point, b.s, b.g, np.random.default_rng(seed))
    assert np.array_equal(imagined, b.g)
    return P.gcwae_update(p, point, vt, env, b, hp, imagined=imagined)


def _awr(p, sub, high, vt, env, b, hp, seed):
    return P.awr_update(p, vt, env, b, hp)


def reduction_pairs(seed):
    """For each reduction, the two tables that must agree bit for bit."""
    return {
        "alpha=0: AWR = GCBC": (
            _flat_step(_awr, seed, alpha=0.0),
            _flat_step(lambda p, s, h, vt, e, b, hp, sd: P.gcbc_update(p, b, hp.lr_pi), seed)),
        "no KL term: SAW = AWR": (
            _flat_step(lambda p, s, h, vt, e, b, hp, sd: P.saw_update(p, s, vt, e, b, hp), seed,
                       saw_kl_term=False),
            _flat_step(_awr, seed)),
        "beta_RIS=0: RIS = AWR": (
            _flat_step(lambda p, s, h, vt, e, b, hp, sd: P.ris_update(p, h, s, vt, e, b, hp,
                                                                      imagined=b.w),
                       seed, beta_ris=0.0),
            _flat_step(_awr, seed)),
        "point-mass high policy: GCWAE = AWR": (
            _flat_step(_gcwae_point_mass, seed), _flat_step(_awr, seed)),
    }
