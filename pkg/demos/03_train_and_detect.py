"""Train the detection head on the synthetic benchmark, then detect
objects of classes it never saw a box for."""
from zsdet import ExperimentConfig, build_world, evaluate_model, train_model
from zsdet.experiment import run_detection

cfg = ExperimentConfig()
world = build_world(cfg)
params, history = train_model(cfg, world)
print(f"trained {cfg.trainer.epochs} epochs, {len(history)} steps; "
      f"loss {history[0]['total']:.3f} -> {history[-1]['total']:.3f}")

for mode in ("seen", "zsd", "gzsd"):
    rep = evaluate_model(cfg, world, params, mode)
    line = f"{mode:>5}: mAP@0.5 {rep.map_all['0.5']:.3f}  Recall@100 {rep.recall_at_100['0.5']:.3f}"
    if mode == "gzsd":
        line += (f"  seen {rep.map_seen['0.5']:.3f} unseen {rep.map_unseen['0.5']:.3f}"
                 f"  HM {rep.harmonic_mean['0.5']:.3f}")
    print(line)

image = world.splits["test_zsd"].images[0]
print("\nfirst ZSD test image, ground truth:",
      [world.vocab.names[c] for c in image.gt_labels])
for d in run_detection(cfg, world, params, "zsd")[image.image_id][:3]:
    print(f"  {world.vocab.names[d.label]:>6} {d.score:.3f} box=({', '.join(f'{v:.1f}' for v in d.box)})")
