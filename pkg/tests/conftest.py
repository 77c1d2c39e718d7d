"""Shared fixtures: a default vocabulary, small corpora, a pretrained
extractor, and an untrained checkpoint for contract tests.

The expensive end-to-end baseline (2000 sprites, 10-epoch pretrain,
5+5-epoch curriculum) is session-scoped and only materializes when the
acceptance tests request it.
"""
from __future__ import annotations

import numpy as np
import pytest
import torch

torch.set_num_threads(2)

from tagpaint.dataset import LoadedDataset, build_dataset
from tagpaint.networks import (CitTrunk, Discriminator, Generator,
                               NetworkConfig, save_checkpoint)
from tagpaint.pretrain import pretrain_cit
from tagpaint.training import TrainSchedule, train
from tagpaint.vocab import default_vocabulary


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, vocab):
    root = tmp_path_factory.mktemp("small-data") / "data"
    build_dataset(120, 64, 7, root, vocab)
    return LoadedDataset(root)


@pytest.fixture(scope="session")
def small_extractor(small_dataset):
    extractor, metrics = pretrain_cit(small_dataset, epochs=4, seed=0)
    return extractor


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, vocab):
    """An untrained 64px secat checkpoint for contract-level tests."""
    torch.manual_seed(0)
    config = NetworkConfig(cvt_count=vocab.cvt_count,
                           cit_count=vocab.cit_count, image_size=64,
                           base_channels=8)
    generator = Generator(config, CitTrunk(config))
    discriminator = Discriminator(config)
    path = tmp_path_factory.mktemp("ckpt") / "secat.pt"
    save_checkpoint(path, generator, discriminator, vocab.sha256(),
                    {"epoch": 0})
    return path


@pytest.fixture(scope="session")
def baseline(tmp_path_factory, vocab):
    """The committed end-to-end run: 2000 sprites at 64px, 10-epoch
    extractor pretraining, then the (5,5,0) secat curriculum."""
    root = tmp_path_factory.mktemp("baseline")
    data_dir = root / "data"
    build_dataset(2000, 64, 11, data_dir, vocab)
    data = LoadedDataset(data_dir)
    extractor, pre_metrics = pretrain_cit(data, epochs=10, seed=3, log=True)
    config = NetworkConfig(cvt_count=vocab.cvt_count,
                           cit_count=vocab.cit_count, image_size=64,
                           base_channels=16)
    schedule = TrainSchedule(step1_epochs=5, step2_epochs=5,
                             finetune_epochs=0, batch_size=16, seed=5,
                             non_saturating=True)
    runlog, ckpt = train(data, config, schedule, root / "run",
                         extractor.trunk, log=True)
    return {"data": data, "extractor": extractor,
            "pretrain_metrics": pre_metrics, "config": config,
            "schedule": schedule, "runlog": runlog, "ckpt": ckpt,
            "run_dir": root / "run"}


# ------------------------------------------------------- gradient checking
#
# The networks are piecewise smooth (ReLU kinks). A central difference is
# only a valid derivative estimate when both evaluations stay on the same
# smooth piece, so the checker records every ReLU's activation pattern and
# skips parameter entries whose +-h perturbation flips any unit.


class _ReluPatternRecorder:
    """Records every ReLU's activation sign pattern per forward pass."""

    def __init__(self, module):
        self._current: list[torch.Tensor] = []
        self.handles = [
            m.register_forward_pre_hook(self._hook)
            for m in module.modules()
            if isinstance(m, (torch.nn.ReLU, torch.nn.LeakyReLU))
        ]

    def _hook(self, _mod, inputs):
        self._current.append(inputs[0].detach() > 0)

    def capture(self, fn):
        self._current = []
        value = fn()
        return value, self._current

    @staticmethod
    def same(a, b) -> bool:
        return (len(a) == len(b)
                and all(torch.equal(x, y) for x, y in zip(a, b)))

    def close(self):
        for h in self.handles:
            h.remove()


def check_grads_against_fd(module, loss_fn, rel_tol, n_samples=200, seed=0,
                           h=1e-4, max_skip_fraction=0.5):
    """Compare autograd parameter gradients with central differences on a
    deterministic sample of parameter entries; returns worst relative error.

    The networks are piecewise smooth (ReLU kinks), so a central
    difference only estimates the derivative when all three evaluations
    stay on one smooth piece: entries whose perturbation flips any ReLU
    activation are excluded and their fraction is bounded.
    """
    recorder = _ReluPatternRecorder(module)
    try:
        module.zero_grad()
        loss, base_pattern = recorder.capture(loss_fn)
        loss.backward()
        analytic = {name: p.grad.detach().clone()
                    for name, p in module.named_parameters()
                    if p.requires_grad and p.grad is not None}
        params = {name: p for name, p in module.named_parameters()
                  if p.requires_grad}
        entries = [(name, i) for name, p in params.items()
                   for i in range(p.numel())]
        rng = np.random.default_rng(seed)
        if len(entries) > n_samples:
            chosen = [entries[i] for i in
                      rng.choice(len(entries), size=n_samples, replace=False)]
        else:
            chosen = entries
        worst = 0.0
        skipped = 0
        for name, idx in chosen:
            flat = params[name].data.view(-1)
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + h
                lp, pat_p = recorder.capture(loss_fn)
                flat[idx] = orig - h
                lm, pat_m = recorder.capture(loss_fn)
                flat[idx] = orig
            if not (recorder.same(base_pattern, pat_p)
                    and recorder.same(base_pattern, pat_m)):
                skipped += 1
                continue
            fd = (float(lp) - float(lm)) / (2.0 * h)
            if name in analytic:
                an = float(analytic[name].view(-1)[idx])
            else:
                an = 0.0  # parameter not on the loss path
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
            worst = max(worst, rel)
            assert rel <= rel_tol, (
                f"gradient mismatch at {name}[{idx}]: analytic {an:.6g} "
                f"vs fd {fd:.6g} (rel {rel:.3g})")
        assert skipped <= max_skip_fraction * len(chosen), (
            f"too many kink-crossing entries skipped: {skipped}/{len(chosen)}")
        assert len(chosen) - skipped >= 10, "too few valid entries checked"
        return worst
    finally:
        recorder.close()
