"""Hit rate and regret of data-blind decisions against posterior decisions on the discrete model.

Decides each evaluation context from the prior mean alone (no experiment), then compares
with ``evaluate_design`` for several designs. The prior-only rule lands at a hit rate of
about one half because actions 1 and 2 are each optimal with equal prior probability;
any design whose data is used moves the hit rate well above that.

    python scripts/hit_rate_analysis.py --environments 2000
"""

import argparse

import numpy as np

from ctxbed.baselines import BaselineSpec, baseline_design
from ctxbed.evaluate import evaluate_design
from ctxbed.models import build_model
from ctxbed.models.base import first_argmax
from ctxbed.stochastics import RngStream


def prior_only(model, Cs, n, seed):
    truths = model.sample_prior(n, RngStream(seed).stream("eval_truth"))
    values = model.action_values(truths, Cs)  # n x |C*| x K
    a_true = first_argmax(values, axis=-1)
    a_prior = first_argmax(model.prior_moments(Cs)[0], axis=-1)
    hits = (a_true == a_prior[None, :]).mean(axis=1)
    regret = (values.max(-1) - np.take_along_axis(values, np.broadcast_to(a_prior[None, :, None], (n, len(Cs), 1)),
                                                  -1)[..., 0]).mean(axis=1)
    se = lambda x: x.std(ddof=1) / np.sqrt(n)  # noqa: E731
    return hits.mean(), se(hits), regret.mean(), se(regret), np.bincount(a_true.ravel(), minlength=4) / a_true.size


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--environments", type=int, default=2000)
    ap.add_argument("--particles", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--design", help="optional design.json from `ctxbed design` to include")
    args = ap.parse_args()

    model, C, Cs, _ = build_model("discrete_quadratic", {"D": 10}, args.seed)
    h, hse, r, rse, freq = prior_only(model, Cs, args.environments, args.seed)
    print(f"true-optimum frequency over actions 1..4: {np.round(freq, 3)}")
    print(f"{'prior-only':12s} hit={h:.3f}+-{hse:.3f} regret={r:.3f}+-{rse:.3f}")

    designs = {}
    for spec in (BaselineSpec("random"), BaselineSpec("ucb", 0.0), BaselineSpec("ucb", 1.0), BaselineSpec("thompson")):
        designs[spec.label] = baseline_design(spec, model, C, RngStream(args.seed).stream("baseline"))
    if args.design:
        from ctxbed.design import load_design

        designs["cobed"] = load_design(args.design, model.action_space, model.name)
    for label, d in designs.items():
        rep = evaluate_design(model, d, C, Cs, args.environments, args.particles, seed=args.seed, method=label)
        print(f"{label:12s} hit={rep.hit_rate:.3f}+-{rep.hit_rate_se:.3f} regret={rep.regret:.3f}+-{rep.regret_se:.3f}"
              f"  actions={d.actions.astype(int).tolist()}")


if __name__ == "__main__":
    main()
