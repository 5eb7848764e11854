"""Forward-sample, refit and count coefficients recovered within 3 standard errors.

Uses the glucose-like model with its knots fixed at the generating location
and no penalty, so the fitted coefficients estimate the true ones.

    python3 scripts/recovery_study.py --reps 100
"""

from __future__ import annotations

import argparse

import numpy as np

from itbn.infer import sample_paths
from itbn.learn import fit_fully_observed, pack
from itbn.model import ProcessSpec, SplineConfig
from itbn.observations import ObservationSet
from itbn.synthetic import glucose_like_model, glucose_like_timeline


def replicate(seed, structure, params, entities, observations):
    rng = np.random.default_rng(seed)
    data = ObservationSet()
    for e in range(entities):
        tl = glucose_like_timeline(observations, rng, e)
        ed = sample_paths(structure, params, tl, 1, rng).entities[0]
        ed.timeline = tl
        data.entities[e] = ed
    pf = fit_fully_observed(structure, data).processes["glucose"]
    truth = pack(params["glucose"].cpd)
    return (pack(pf.params.cpd) - truth) / pf.standard_errors[: truth.size]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--entities", type=int, default=6)
    ap.add_argument("--observations", type=int, default=63)
    args = ap.parse_args()

    structure, params = glucose_like_model()
    knots = SplineConfig(1, (3.0,))
    structure = structure.with_spec("glucose", ProcessSpec(knots, knots, 0.0))
    z = np.array([replicate(s, structure, params, args.entities, args.observations) for s in range(args.reps)])
    names = ["alpha0", "alpha1", "alpha_knot", "beta0", "beta1", "beta_knot"]
    print(f"{'coef':>10} {'mean z':>8} {'sd z':>6} {'|z|<=3':>7}")
    for i, name in enumerate(names):
        print(f"{name:>10} {z[:, i].mean():>8.3f} {z[:, i].std():>6.3f} {np.mean(np.abs(z[:, i]) <= 3):>7.2f}")
    print(f"replicates with every coefficient within 3 SE: {np.sum(np.all(np.abs(z) <= 3, axis=1))}/{args.reps}")


if __name__ == "__main__":
    main()
