"""Exploratory LQG mean field games.

Thin wrappers over the C++ core. Specs and market parameters are plain
dicts in the same layout as the JSON files read by the ``emfg`` tool.
"""

import json

import numpy as np

from . import _core
from ._core import InputError, NumericalError

__all__ = [
    "InputError",
    "NumericalError",
    "validate_spec",
    "solve_are",
    "solve",
    "closed_forms",
    "simulate_means",
    "coe_experiment",
    "coupling_gap_experiment",
    "default_market",
    "rl_loop",
]


def _text(obj):
    return obj if isinstance(obj, str) else json.dumps(obj)


def validate_spec(spec):
    """Return (ok, violations) for a spec dict."""
    return _core.validate_spec(_text(spec))


def solve_are(A, B, Q, R, S=None, rho=0.0):
    """Stabilizing solution of the discounted Riccati equation and its residual."""
    as2d = lambda M: np.atleast_2d(np.asarray(M, dtype=float))
    return _core.solve_are(as2d(A), as2d(B), as2d(Q), as2d(R), None if S is None else as2d(S), float(rho))


def solve(spec, horizon=0.0, tol=1e-10, damping=0.5, stride=1):
    """Mean field equilibrium as a dict (same layout as meanfield_solution.json)."""
    return json.loads(_core.solve(_text(spec), horizon, tol, damping, stride))


def closed_forms(spec, k=0):
    return _core.closed_forms(_text(spec), k)


def simulate_means(spec, agents, horizon=5.0, steps=500, seed=0, exploratory=True):
    """(t, empirical per-type means, limit means) for a finite population."""
    return _core.simulate_means(_text(spec), agents, horizon, steps, seed, exploratory)


def coe_experiment(spec, k=0, reps=1000, seed=0, horizon=50.0, dt=0.05):
    estimate, std_err, analytic, csv = _core.coe_experiment(_text(spec), k, reps, seed, horizon, dt)
    return {"estimate": estimate, "std_err": std_err, "analytic": analytic, "csv": csv}


def coupling_gap_experiment(spec, Ns, reps=16, seed=0, horizon=10.0, dt=0.01):
    value, std_err, slope, csv = _core.coupling_gap_experiment(_text(spec), list(Ns), reps, seed, horizon, dt)
    return {"value": value, "std_err": std_err, "slope": slope, "csv": csv}


def default_market():
    return json.loads(_core.default_market())


def rl_loop(truth, init=None, iterations=5, traders=20, steps=200, inner_repeats=5, seed=0):
    """Learning trace as a dict (same layout as trace.json)."""
    init = truth if init is None else init
    return json.loads(_core.rl_loop(_text(truth), _text(init), iterations, traders, steps, inner_repeats, seed))
