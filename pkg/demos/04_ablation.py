"""Switch off the unseen alignment term (lambda) or the region contrastive
term (beta) and compare against the full objective on matched seeds."""
from zsdet import ExperimentConfig, build_world
from zsdet.experiment import sweep

for seed in (0, 1, 2):
    cfg = ExperimentConfig().with_overrides({"data.seed": seed, "trainer.seed": seed})
    world = build_world(cfg, ("train", "test_zsd", "test_gzsd"))
    lam = {r["lambda"]: r for r in sweep(cfg, "lambda", [0.0, cfg.model.lam], world=world)}
    beta = {r["beta"]: r for r in sweep(cfg, "beta", [0.0, cfg.model.beta], world=world)}
    print(f"seed {seed}: GZSD unseen mAP {lam[cfg.model.lam]['gzsd_unseen_map']:.3f} "
          f"(lambda=0: {lam[0.0]['gzsd_unseen_map']:.3f}) | "
          f"ZSD mAP {beta[cfg.model.beta]['zsd_map']:.3f} (beta=0: {beta[0.0]['zsd_map']:.3f})")
