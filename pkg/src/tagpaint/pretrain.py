"""Pretraining of the shape-tag extractor on the sprite corpus.

The classifier learns per-tag binary predictions from line arts; its trunk
(up to the 1/8-resolution stage) is what the generator consumes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from . import lineart
from .dataset import LoadedDataset
from .networks import CitExtractor, NetworkConfig

EXTRACTOR_FORMAT_VERSION = 1


def save_extractor(path: str | Path, extractor: CitExtractor,
                   vocab_sha256: str, metrics: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format_version": EXTRACTOR_FORMAT_VERSION,
                "config": extractor.config.to_dict(),
                "vocab_sha256": vocab_sha256,
                "metrics": metrics or {},
                "state": extractor.state_dict()}, path)
    return path


def load_extractor(path: str | Path,
                   vocab_sha256: str | None = None) -> tuple[CitExtractor, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != EXTRACTOR_FORMAT_VERSION:
        raise ValueError(f"unsupported extractor format version {version!r}")
    if vocab_sha256 is not None and payload["vocab_sha256"] != vocab_sha256:
        raise ValueError("extractor vocabulary hash mismatch")
    extractor = CitExtractor(NetworkConfig.from_dict(payload["config"]))
    extractor.load_state_dict(payload["state"])
    extractor.eval()
    return extractor, payload["metrics"]


def _epoch_lineart(colors: np.ndarray, size: int, seed: int,
                   epoch: int) -> np.ndarray:
    """Per-sample jittered XDoG extraction for one epoch, deterministic."""
    base = lineart.sprite_default(size)
    out = np.empty(colors.shape[:3], dtype=np.float32)
    for i in range(colors.shape[0]):
        rng = np.random.default_rng([seed, epoch, i])
        params = lineart.jitter_params(base, rng)
        out[i] = lineart.extract_lineart(colors[i], params)
    return out


def pretrain_cit(data: LoadedDataset, epochs: int, batch_size: int = 32,
                 lr: float = 2e-4, seed: int = 0,
                 config: NetworkConfig | None = None,
                 log: bool = False) -> tuple[CitExtractor, dict]:
    """Train the multi-label shape-tag classifier; returns it plus metrics.

    Metrics carry per-tag precision/recall/accuracy on the test split and
    the train-set loss at initialization and after each epoch.
    """
    train_ids = data.ids("train")
    test_ids = data.ids("test")
    if not train_ids:
        raise ValueError("dataset has no training records")
    vocab = data.vocab
    if config is None:
        config = NetworkConfig(cvt_count=vocab.cvt_count,
                               cit_count=vocab.cit_count,
                               image_size=data.size)
    torch.manual_seed(seed)
    model = CitExtractor(config)
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.5, 0.999))
    bce = torch.nn.BCEWithLogitsLoss()

    colors = np.stack([data.load_color(i) for i in train_ids])
    targets = torch.from_numpy(np.stack(
        [data.record(i).cit.values for i in train_ids]))

    def mean_loss(la: np.ndarray) -> float:
        model.eval()
        with torch.no_grad():
            losses = []
            for s in range(0, len(train_ids), batch_size):
                x = torch.from_numpy(la[s:s + batch_size, None])
                losses.append(bce(model(x), targets[s:s + batch_size]).item())
        return float(np.mean(losses))

    la0 = _epoch_lineart(colors, data.size, seed, 0)
    metrics: dict = {"loss_at_init": mean_loss(la0), "epoch_losses": []}

    n = len(train_ids)
    for epoch in range(epochs):
        la = la0 if epoch == 0 else _epoch_lineart(colors, data.size, seed, epoch)
        order = np.random.default_rng([seed, 77, epoch]).permutation(n)
        model.train()
        running = []
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            x = torch.from_numpy(la[idx][:, None])
            loss = bce(model(x), targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            running.append(loss.item())
        metrics["epoch_losses"].append(float(np.mean(running)))
        if log:
            print(f"pretrain epoch {epoch + 1}/{epochs}: "
                  f"loss {metrics['epoch_losses'][-1]:.4f}")

    # test-split evaluation with the unjittered preset
    model.eval()
    per_tag = {}
    if test_ids:
        records = [data.record(i) for i in test_ids]
        x = torch.from_numpy(np.stack([r.line_art for r in records])[:, None])
        t = np.stack([r.cit.values for r in records])
        with torch.no_grad():
            preds = []
            for s in range(0, len(records), batch_size):
                preds.append(torch.sigmoid(model(x[s:s + batch_size])).numpy())
        p = (np.concatenate(preds) > 0.5).astype(np.float32)
        for j, name in enumerate(vocab.cit_names):
            tp = float(((p[:, j] == 1) & (t[:, j] == 1)).sum())
            fp = float(((p[:, j] == 1) & (t[:, j] == 0)).sum())
            fn = float(((p[:, j] == 0) & (t[:, j] == 1)).sum())
            per_tag[name] = {
                "precision": tp / (tp + fp) if tp + fp else 0.0,
                "recall": tp / (tp + fn) if tp + fn else 0.0,
                "accuracy": float((p[:, j] == t[:, j]).mean()),
            }
    metrics["per_tag"] = per_tag
    metrics["mean_accuracy"] = (float(np.mean([m["accuracy"] for m in per_tag.values()]))
                                if per_tag else float("nan"))
    model.trunk.mark_pretrained()
    return model, metrics
