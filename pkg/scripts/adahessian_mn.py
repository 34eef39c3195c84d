"""AdaHessian on a wide-dense model: block size 1 versus block size = width.

Per-epoch C_t traces come from the dense Hessian. Wide blocks average the
curvature estimate across a whole row of weights, so the optimizer's steps
stop tracking the loss curvature; whether that shows up as MN epochs or a
noisier C_t trace varies from seed to seed.
"""

from hesd.experiments import adahessian_block_comparison

from _common import emit, parser


def main():
    p = parser(__doc__)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--epochs", type=int, default=40)
    args = p.parse_args()
    rows = adahessian_block_comparison(range(args.seeds), args.width, epochs=args.epochs)
    for r in rows:
        print(f"seed {r['seed']}: std of C_t steps  block 1 {r['std_step_block1']:.4g}  "
              f"block {args.width} {r['std_step_wide']:.4g}   MN epochs "
              f"{r['mn_epochs_block1']} vs {r['mn_epochs_wide']}")
    print(f"wide blocks noisier in {sum(r['wide_more_variable'] for r in rows)}/{len(rows)} seeds")
    emit(rows, args.json)


if __name__ == "__main__":
    main()
