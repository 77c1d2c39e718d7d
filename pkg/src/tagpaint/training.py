"""Two-step curriculum trainer with brightness fine-tuning, plus the
ablation and curriculum-comparison harnesses.

Epoch plan: ``step1_epochs`` of segmentation losses (adversarial +
reconstruction), then ``step2_epochs`` with the tag classification loss
added, then ``finetune_epochs`` of the same losses with the line-art
input brightness scaled by a per-batch U(lo, hi) draw.

Determinism: all sampling (batch order, line-art jitter, brightness)
derives from the schedule seed; torch is seeded before weight init. Runs
are reproducible on one backend build (thread-level reductions may vary
across environments).
"""
from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import lineart
from .blocks import BlockKind, count_params
from .dataset import LoadedDataset
from .losses import (LossParts, LossWeights, TrainingStep, adv_loss, cls_loss,
                     compose_losses, generator_adv_loss, rec_loss)
from .metrics import TrunkFeatureExtractor, color_bleed, fid_toy, tag_fidelity
from .networks import (CitTrunk, Discriminator, Generator, NetworkConfig,
                       load_checkpoint, save_checkpoint)


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; the last good checkpoint is retained."""

    def __init__(self, message: str, last_checkpoint: Path | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainSchedule:
    step1_epochs: int
    step2_epochs: int
    finetune_epochs: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 2e-4
    batch_size: int = 16
    seed: int = 0
    brightness_range: tuple[float, float] = (1.0, 7.0)
    non_saturating: bool = False

    def __post_init__(self):
        for name in ("step1_epochs", "step2_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        lo, hi = self.brightness_range
        if lo < 1.0 or hi < lo:
            raise ValueError("brightness range must satisfy 1 <= lo <= hi")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def epoch_plan(self) -> list[TrainingStep]:
        return ([TrainingStep.segmentation] * self.step1_epochs
                + [TrainingStep.colorization] * self.step2_epochs
                + [TrainingStep.brightness_finetune] * self.finetune_epochs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["brightness_range"] = list(self.brightness_range)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainSchedule":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "brightness_range" in d:
            d["brightness_range"] = tuple(d["brightness_range"])
        return TrainSchedule(**d)


@dataclass
class LossRecord:
    iteration: int
    epoch: int
    step: str
    l_adv: float
    l_rec: float
    l_cls: float
    l_d: float
    l_g: float


@dataclass
class RunLog:
    records: list[LossRecord] = field(default_factory=list)
    epoch_stats: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    wall_seconds: float = 0.0

    def append(self, rec: LossRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iterations must strictly increase")
        self.records.append(rec)

    def epoch_mean(self, epoch: int, key: str) -> float:
        vals = [getattr(r, key) for r in self.records if r.epoch == epoch]
        return float(np.mean(vals))

    def save_jsonl(self, path: Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(vars(r)) + "\n")


def schedule_hash(config: NetworkConfig, schedule: TrainSchedule) -> str:
    doc = json.dumps({"config": config.to_dict(),
                      "schedule": schedule.to_dict()}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _epoch_lineart(colors: np.ndarray, size: int, seed: int,
                   epoch: int) -> np.ndarray:
    base = lineart.sprite_default(size)
    out = np.empty(colors.shape[:3], dtype=np.float32)
    for i in range(colors.shape[0]):
        rng = np.random.default_rng([seed, epoch, i])
        out[i] = lineart.extract_lineart(
            colors[i], lineart.jitter_params(base, rng))
    return out


def _load_arrays(data: LoadedDataset, ids: Sequence[str]):
    colors = np.stack([data.load_color(i) for i in ids]).astype(np.float32)
    cvt = np.stack([data.record(i).cvt.values for i in ids])
    cit = np.stack([data.record(i).cit.values for i in ids])
    return colors, cvt, cit


def train(data: LoadedDataset, config: NetworkConfig, schedule: TrainSchedule,
          run_dir: str | Path, cit_trunk: CitTrunk,
          on_epoch_end: Callable[[int, TrainingStep, Generator], None] | None = None,
          log: bool = False) -> tuple[RunLog, Path]:
    """Run the curriculum; writes config echo, jsonl log, and checkpoints.

    Returns the run log and the final checkpoint path.
    """
    t_start = time.time()
    vocab = data.vocab
    if config.cvt_count != vocab.cvt_count or config.cit_count != vocab.cit_count:
        raise ValueError("network config tag counts do not match the vocabulary")
    if config.image_size != data.size:
        raise ValueError(f"config image_size {config.image_size} != dataset "
                         f"size {data.size}")
    if not cit_trunk.pretrained:
        warnings.warn("shape-tag trunk has not been pretrained; generator "
                      "will consume raw random features", stacklevel=2)

    run_dir = Path(run_dir)
    (run_dir / "ckpt").mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n")
    (run_dir / "schedule.json").write_text(
        json.dumps(schedule.to_dict(), sort_keys=True, indent=2) + "\n")

    torch.manual_seed(schedule.seed)
    generator = Generator(config, cit_trunk)
    discriminator = Discriminator(config)
    g_params = [p for p in generator.parameters() if p.requires_grad]
    g_opt = torch.optim.Adam(g_params, lr=schedule.lr, betas=(0.5, 0.999))
    d_opt = torch.optim.Adam(discriminator.parameters(), lr=schedule.lr,
                             betas=(0.5, 0.999))

    train_ids = data.ids("train")
    if not train_ids:
        raise ValueError("dataset has no training records")
    colors, cvt_arr, cit_arr = _load_arrays(data, train_ids)
    y_all = torch.from_numpy(colors).permute(0, 3, 1, 2) * 2.0 - 1.0
    cvt_all = torch.from_numpy(cvt_arr)
    cit_all = torch.from_numpy(cit_arr)
    n = len(train_ids)

    runlog = RunLog()
    iteration = 0
    last_ckpt: Path | None = None
    vocab_hash = vocab.sha256()
    plan = schedule.epoch_plan()
    prev_step: TrainingStep | None = None

    def checkpoint(tag: str, epoch: int, step: TrainingStep) -> Path:
        path = run_dir / "ckpt" / f"{tag}.pt"
        save_checkpoint(path, generator, discriminator, vocab_hash,
                        schedule_state={"epoch": epoch, "step": step.value,
                                        "iteration": iteration,
                                        "schedule": schedule.to_dict()})
        runlog.checkpoints.append(str(path))
        return path

    for epoch, step in enumerate(plan):
        if prev_step is not None and step != prev_step:
            checkpoint(f"transition_{step.value}", epoch, prev_step)
        prev_step = step
        la = _epoch_lineart(colors, data.size, schedule.seed, epoch)
        epoch_rng = np.random.default_rng([schedule.seed, 1000 + epoch])
        order = epoch_rng.permutation(n)
        cls_active = step is not TrainingStep.segmentation

        for s in range(0, n, schedule.batch_size):
            idx = order[s:s + schedule.batch_size]
            x = torch.from_numpy(la[idx])[:, None]
            if step is TrainingStep.brightness_finetune:
                factor = float(epoch_rng.uniform(*schedule.brightness_range))
                x = torch.clamp(x * factor, max=1.0)
            y = y_all[idx]
            cvt_t = cvt_all[idx]
            cit_t = cit_all[idx]

            # discriminator update
            with torch.no_grad():
                fake = generator(x, cvt_t).full_image
            d_real = discriminator(y)
            d_fake = discriminator(fake)
            l_adv_d = adv_loss(d_real.adv, d_fake.adv)
            l_cls_d = None
            if cls_active:
                l_cls_d = (cls_loss(d_real.cvt_probs, d_real.cit_probs, cvt_t, cit_t)
                           + cls_loss(d_fake.cvt_probs, d_fake.cit_probs, cvt_t, cit_t))
            zero = torch.zeros(())
            l_d, _ = compose_losses(step, LossParts(
                l_adv=l_adv_d, l_rec=zero, l_cls_d=l_cls_d,
                l_cls_g=zero if cls_active else None), schedule.weights)
            d_opt.zero_grad(set_to_none=True)
            l_d.backward()
            d_opt.step()

            # generator update
            out = generator(x, cvt_t)
            d_fake_g = discriminator(out.full_image)
            l_adv_g = adv_loss(d_real.adv.detach(), d_fake_g.adv)
            l_rec = rec_loss(y, out.full_image, out.guide_image,
                             schedule.weights.beta)
            l_cls_g = None
            if cls_active:
                l_cls_g = cls_loss(d_fake_g.cvt_probs, d_fake_g.cit_probs,
                                   cvt_t, cit_t)
            l_adv_ns = (generator_adv_loss(d_fake_g.adv)
                        if schedule.non_saturating else None)
            _, l_g = compose_losses(step, LossParts(
                l_adv=l_adv_g, l_rec=l_rec,
                l_cls_d=zero if cls_active else None, l_cls_g=l_cls_g,
                l_adv_g=l_adv_ns), schedule.weights)
            g_opt.zero_grad(set_to_none=True)
            l_g.backward()
            g_opt.step()

            if not (torch.isfinite(l_d) and torch.isfinite(l_g)):
                raise TrainingAborted(
                    f"non-finite loss at iteration {iteration}", last_ckpt)

            iteration += 1
            runlog.append(LossRecord(
                iteration=iteration, epoch=epoch, step=step.value,
                l_adv=float(l_adv_d.item()), l_rec=float(l_rec.item()),
                l_cls=float(l_cls_d.item()) if l_cls_d is not None else 0.0,
                l_d=float(l_d.item()), l_g=float(l_g.item())))

        runlog.epoch_stats.append({
            "epoch": epoch, "step": step.value,
            "mean_l_rec": runlog.epoch_mean(epoch, "l_rec"),
            "mean_l_adv": runlog.epoch_mean(epoch, "l_adv"),
            "mean_l_cls": runlog.epoch_mean(epoch, "l_cls"),
        })
        last_ckpt = checkpoint(f"epoch_{epoch + 1:03d}", epoch + 1, step)
        if log:
            st = runlog.epoch_stats[-1]
            print(f"epoch {epoch + 1}/{len(plan)} [{step.value}] "
                  f"l_rec {st['mean_l_rec']:.4f} l_adv {st['mean_l_adv']:.4f}")
        if on_epoch_end is not None:
            generator.eval()
            with torch.no_grad():
                on_epoch_end(epoch, step, generator)
            generator.train()

    if last_ckpt is None:
        # zero-epoch schedule still yields a usable (initialized) model
        last_ckpt = checkpoint("epoch_000", 0, TrainingStep.segmentation)
    runlog.wall_seconds = time.time() - t_start
    runlog.save_jsonl(run_dir / "log.jsonl")
    return runlog, last_ckpt


def generate_images(generator: Generator, data: LoadedDataset,
                    ids: Sequence[str], batch_size: int = 32) -> list[np.ndarray]:
    """Colorize the stored line arts of `ids`; RGB arrays in [0,1]."""
    generator.eval()
    out: list[np.ndarray] = []
    with torch.no_grad():
        for s in range(0, len(ids), batch_size):
            chunk = [data.record(i) for i in ids[s:s + batch_size]]
            x = torch.from_numpy(np.stack([r.line_art for r in chunk]))[:, None]
            cvt = torch.from_numpy(np.stack([r.cvt.values for r in chunk]))
            g_f = generator(x, cvt).full_image
            imgs = ((g_f + 1.0) / 2.0).clamp(0, 1).permute(0, 2, 3, 1).numpy()
            out.extend(np.asarray(im) for im in imgs)
    return out


def evaluate_generator(generator: Generator, data: LoadedDataset,
                       ids: Sequence[str],
                       extractor: TrunkFeatureExtractor) -> dict:
    """FID-toy, tag fidelity, and color bleed of a generator on `ids`."""
    generated = generate_images(generator, data, ids)
    reference = [data.load_color(i) for i in ids]
    masks = [data.load_mask(i) for i in ids]
    specs = [data.spec_for(i) for i in ids]
    return {
        "fid_toy": fid_toy(generated, reference, extractor),
        "tag_fidelity": tag_fidelity(generated, specs, masks, data.vocab),
        "color_bleed": color_bleed(generated, masks, data.vocab, specs),
    }


def ablate(data: LoadedDataset, kinds: Sequence[BlockKind | str],
           schedule: TrainSchedule, run_dir: str | Path, cit_trunk: CitTrunk,
           extractor: TrunkFeatureExtractor | None = None,
           base_config: NetworkConfig | None = None, log: bool = False):
    """Train one generator per block kind under one seed/schedule and
    report FID-toy (at its best epoch), tag fidelity, color bleed, and
    trainable parameter count per kind."""
    from .report import AblationRow, EvalReport

    if not kinds:
        raise ValueError("need at least one block kind")
    kinds = [BlockKind(k) for k in kinds]
    run_dir = Path(run_dir)
    vocab = data.vocab
    if base_config is None:
        base_config = NetworkConfig(cvt_count=vocab.cvt_count,
                                    cit_count=vocab.cit_count,
                                    image_size=data.size)
    if extractor is None:
        extractor = TrunkFeatureExtractor(cit_trunk, data.size)
    test_ids = data.ids("test")
    rows = []
    for kind in kinds:
        config = NetworkConfig(**{**base_config.to_dict(), "block_kind": kind})
        kind_dir = run_dir / kind.value
        history: list[tuple[float, int, dict]] = []

        def snapshot(epoch, step, generator):
            m = evaluate_generator(generator, data, test_ids, extractor)
            history.append((m["fid_toy"], epoch, m))

        try:
            _, final_ckpt = train(data, config, schedule, kind_dir, cit_trunk,
                                  on_epoch_end=snapshot, log=log)
            best_fid, best_epoch, best_metrics = min(history,
                                                     key=lambda h: (h[0], h[1]))
            ckpt = kind_dir / "ckpt" / f"epoch_{best_epoch + 1:03d}.pt"
            bundle = load_checkpoint(ckpt, vocab.sha256(),
                                     with_discriminator=False)
            rows.append(AblationRow(
                kind=kind.value, seed=schedule.seed, fid_toy=best_fid,
                tag_fidelity=best_metrics["tag_fidelity"],
                color_bleed=best_metrics["color_bleed"],
                params=count_params(bundle.generator),
                checkpoint=str(ckpt), note=""))
        except Exception as exc:  # annotate and keep going
            rows.append(AblationRow(
                kind=kind.value, seed=schedule.seed, fid_toy=float("nan"),
                tag_fidelity=float("nan"), color_bleed=float("nan"),
                params=-1, checkpoint="", note=f"failed: {exc}"))
    return EvalReport(rows=rows,
                      schedule_hash=schedule_hash(base_config, schedule))


def compare_curricula(data: LoadedDataset, schedule: TrainSchedule,
                      run_dir: str | Path, cit_trunk: CitTrunk,
                      extractor: TrunkFeatureExtractor | None = None,
                      seeds: Sequence[int] = (0, 1, 2),
                      base_config: NetworkConfig | None = None,
                      log: bool = False):
    """Two-step vs single-step arms at equal total epochs, over seeds.

    The bleed direction (two-step bleeds less) is recorded as observed or
    not; it is informational, not a pass/fail assertion.
    """
    from .report import CurriculumReport, CurriculumRow

    run_dir = Path(run_dir)
    vocab = data.vocab
    if base_config is None:
        base_config = NetworkConfig(cvt_count=vocab.cvt_count,
                                    cit_count=vocab.cit_count,
                                    image_size=data.size)
    if extractor is None:
        extractor = TrunkFeatureExtractor(cit_trunk, data.size)
    total = schedule.step1_epochs + schedule.step2_epochs
    test_ids = data.ids("test")
    rows = []
    per_seed: dict[int, dict[str, float]] = {}
    for seed in seeds:
        for arm, (s1, s2) in (("two_step", (schedule.step1_epochs,
                                            schedule.step2_epochs)),
                              ("single_step", (0, total))):
            arm_schedule = TrainSchedule(
                step1_epochs=s1, step2_epochs=s2, finetune_epochs=0,
                weights=schedule.weights, lr=schedule.lr,
                batch_size=schedule.batch_size, seed=seed,
                brightness_range=schedule.brightness_range,
                non_saturating=schedule.non_saturating)
            arm_dir = run_dir / f"{arm}_seed{seed}"
            _, ckpt = train(data, base_config, arm_schedule, arm_dir,
                            cit_trunk, log=log)
            bundle = load_checkpoint(ckpt, vocab.sha256(),
                                     with_discriminator=False)
            m = evaluate_generator(bundle.generator, data, test_ids, extractor)
            rows.append(CurriculumRow(arm=arm, seed=seed,
                                      tag_fidelity=m["tag_fidelity"],
                                      color_bleed=m["color_bleed"]))
            per_seed.setdefault(seed, {})[arm] = m["color_bleed"]
    wins = sum(1 for s in per_seed.values()
               if s["two_step"] <= s["single_step"])
    observed = wins > len(per_seed) / 2
    return CurriculumReport(rows=rows, two_step_bleeds_less=observed,
                            schedule_hash=schedule_hash(base_config, schedule))
