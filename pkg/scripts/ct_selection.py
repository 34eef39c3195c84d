"""Compare checkpoint selection by max C_t with selection by min top eigenvalue
on a long AdamW run, using the shifted split as the held-out set."""

from dataclasses import replace

from hesd.analysis import analyze
from hesd.criteria import EpochCriteria, select_checkpoint
from hesd.experiments import blob_run, blobs
from hesd.train import AnalysisConfig, train

from _common import emit, parser


def main():
    p = parser(__doc__)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--every", type=int, default=20)
    p.add_argument("--shift", type=float, default=2.0)
    p.add_argument("--tie-band", type=float, default=0.01)
    args = p.parse_args()
    out = []
    for seed in range(args.seeds):
        cfg = blob_run("adamw", seed, args.epochs, args.every)
        cfg = replace(cfg, dataset=blobs(seed, shift=args.shift))
        r = train(cfg)
        rows = []
        for ck in r.checkpoints:
            rep = analyze(ck.model, ck.params, r.dataset.train, AnalysisConfig(power_iters=50),
                          ck.checkpoint_id).report
            rows.append(EpochCriteria(ck.epoch, rep.c_t, rep.lambda_max_pos, ck.train_acc,
                                      ck.gen_acc))
        picks = select_checkpoint(rows, args.tie_band)
        gen = {row.epoch: row.gen_acc for row in rows}
        print(f"seed {seed}: max-C_t epoch {picks['max-ct']:4d} gen {gen[picks['max-ct']]:.3f}   "
              f"min-eigenvalue epoch {picks['min-max-eigenvalue']:4d} "
              f"gen {gen[picks['min-max-eigenvalue']]:.3f}")
        out.append({"seed": seed, "picks": picks,
                    "gen_acc": {k: gen[v] for k, v in picks.items()},
                    "rows": [row.__dict__ for row in rows]})
    emit(out, args.json)


if __name__ == "__main__":
    main()
