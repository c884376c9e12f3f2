"""Training procedures: the alternating adversarial step, the staged
self-training run, the source-only baseline and the ablation matrix."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import losses as L
from .data import DomainDataset, batches, load_dataset, n_batches, subject_split, generate_synthetic
from .errors import ConfigError, LabelError, NumericError
from .losses import LossReport, LossWeights
from .metrics import ConfusionMatrix, evaluate
from .model import AdastModel
from .optim import Adam, lr_schedule
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    pretrain_epochs: int = 15
    epochs_per_round: int = 10
    self_train_rounds: int = 2
    batch_size: int = 32
    restart_lr_each_stage: bool = True

    @property
    def total_epochs(self) -> int:
        return self.pretrain_epochs + self.self_train_rounds * self.epochs_per_round

    def validate(self) -> list[str]:
        out = []
        if self.pretrain_epochs < 1:
            out.append("schedule.pretrain_epochs must be >= 1")
        if self.self_train_rounds < 0:
            out.append("schedule.self_train_rounds must be >= 0")
        if self.self_train_rounds and self.epochs_per_round < 1:
            out.append("schedule.epochs_per_round must be >= 1 when rounds > 0")
        if self.batch_size < 1:
            out.append("schedule.batch_size must be >= 1")
        return out


@dataclass
class AblationToggles:
    use_attention: bool = True
    use_dual_classifiers: bool = True
    use_self_training: bool = True

    @property
    def name(self) -> str:
        parts = [tag for tag, on in (("att", self.use_attention), ("dc", self.use_dual_classifiers),
                                     ("st", self.use_self_training)) if on]
        return "_".join(parts) or "none"


# rows of the ablation table, in reporting order
ABLATION_VARIANTS = (
    AblationToggles(False, False, False),
    AblationToggles(True, False, False),
    AblationToggles(True, True, False),
    AblationToggles(True, False, True),
    AblationToggles(True, True, True),
)


@dataclass
class DomainPair:
    source: DomainDataset
    target: DomainDataset


@dataclass
class RunResult:
    mode: str
    seed: int
    model: AdastModel
    history: list[tuple[int, str, float, float]] = field(default_factory=list)
    losses: list[tuple[int, LossReport]] = field(default_factory=list)
    best_epoch: int = -1
    test_acc: float = float("nan")
    test_mf1: float = float("nan")
    test_cm: ConfusionMatrix | None = None
    source_test_acc: float = float("nan")
    first_stage: "StageSnapshot | None" = None

    def summary(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "best_epoch": self.best_epoch,
                "acc": self.test_acc, "mf1": self.test_mf1, "source_acc": self.source_test_acc}


def prepare_data(cfg) -> DomainPair:
    """Load or synthesise both domains and assign subject-wise splits."""
    if cfg.data.source_path or cfg.data.target_path:
        if not (cfg.data.source_path and cfg.data.target_path):
            raise ConfigError("data.source_path and data.target_path must be given together")
        source = load_dataset(cfg.data.source_path, "source")
        target = load_dataset(cfg.data.target_path, "target")
    else:
        source = generate_synthetic(cfg.synth, "source")
        target = generate_synthetic(cfg.synth, "target")
    if not source.is_labeled():
        raise LabelError("source dataset must be fully labeled")
    fr = tuple(cfg.data.fractions)
    return DomainPair(subject_split(source, fr, cfg.data.split_seed),
                      subject_split(target, fr, cfg.data.split_seed + 1))


def build_model(cfg, seed: int, toggles: AblationToggles | None = None) -> AdastModel:
    toggles = toggles or cfg.ablation
    return AdastModel(cfg.arch, seed, toggles.use_attention, toggles.use_dual_classifiers)


# -- one optimisation step ----------------------------------------------
def train_step(model: AdastModel, src_batch, trg_batch, pseudo: np.ndarray | None,
               opt_d: Adam | None, opt_main: Adam, w: LossWeights,
               step: int = 0, adversarial: bool = True) -> LossReport:
    """Discriminator update, then extractor/classifier update on the same batch pair.

    The discriminator step cannot change the extractor, so the features from
    the single forward pass are reused for the second sub-step.
    ``pseudo`` holds frozen target labels for this batch, or None outside
    self-training. ``adversarial=False`` gives the source-only update.
    """
    try:
        return _train_step(model, src_batch, trg_batch, pseudo, opt_d, opt_main, w, step, adversarial)
    except NumericError as exc:
        if str(exc).startswith("step "):
            raise
        raise NumericError(f"step {step}: {exc}") from exc


def _train_step(model, src_batch, trg_batch, pseudo, opt_d, opt_main, w, step, adversarial):
    xs, ys = src_batch
    report = LossReport()
    feat_s, p_s = model.forward_source(Tensor(xs))

    if adversarial:
        feat_t, p_t = model.forward_target(Tensor(trg_batch))
        # (1) discriminator on frozen features
        opt_d.zero_grad()
        l_d = L.discriminator_loss(model.discriminate(feat_s.detach()),
                                   model.discriminate(feat_t.detach()))
        _finite(l_d, "l_d", step)
        backward(l_d)
        opt_d.step()
        report.l_d = l_d.item()
        # (2) extractor side against the updated discriminator
        l_adv = L.adversarial_loss(model.discriminate(feat_s), model.discriminate(feat_t))
    else:
        p_t = None
        l_adv = Tensor(0.0)

    l_cls_s = L.source_cls_loss(p_s, ys)
    l_cls_t = L.target_cls_loss(p_t, pseudo) if pseudo is not None else Tensor(0.0)
    weights = w if pseudo is not None else replace(w, lambda1=0.0)
    if model.C2 is not None and adversarial:
        if w.per_layer_reg:
            reg = L.per_layer_regularizer(model.classifier_weight_pairs())
        else:
            reg = L.classifier_regularizer(*model.classifier_param_vectors())
    else:
        reg = Tensor(0.0)
        weights = replace(weights, lambda2=0.0)
    for name, t in (("l_adv", l_adv), ("l_cls_s", l_cls_s), ("l_cls_t", l_cls_t), ("reg", reg)):
        _finite(t, name, step)
    total = L.overall_loss(l_adv, l_cls_s, l_cls_t, reg, weights)
    opt_main.zero_grad()
    backward(total)
    opt_main.step()

    report.l_adv = l_adv.item()
    report.l_cls_s = l_cls_s.item()
    report.l_cls_t = l_cls_t.item()
    report.reg = reg.item()
    report.l_overall = total.item()
    return report


def _finite(t: Tensor, name: str, step: int) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"step {step}: loss component {name} is not finite")


# -- staged training -----------------------------------------------------
def predict_pseudo_labels(model: AdastModel, ds: DomainDataset, split: str = "train",
                          batch_size: int = 256) -> np.ndarray:
    """Frozen labels for every record of ``split`` via the target path; other entries are -1."""
    out = np.full(len(ds), -1, dtype=np.int64)
    was_training = model.training
    model.eval()
    with no_grad():
        for x, _, idx in batches(ds, split, batch_size, 0, 0, shuffle=False, with_index=True):
            _, p = model.forward_target(Tensor(x))
            out[idx] = L.pseudo_labels(p)
    model.train(was_training)
    return out


def _cycled(ds: DomainDataset, split: str, batch_size: int, seed: int, epoch: int):
    cycle = 0
    while True:
        yield from batches(ds, split, batch_size, seed, epoch * 1000 + cycle, with_index=True)
        cycle += 1


class _Best:
    def __init__(self):
        self.acc = -1.0
        self.epoch = -1
        self.state = None

    def offer(self, model: AdastModel, acc: float, epoch: int) -> None:
        if acc > self.acc:
            self.acc, self.epoch, self.state = acc, epoch, model.state_dict()


# Keys that only matter after the pre-training stage. Runs that agree on
# everything else share their first stage bit for bit.
_LATE_KEYS = ("loss.lambda1", "schedule.self_train_rounds", "schedule.epochs_per_round",
              "schedule.restart_lr_each_stage", "ablation.use_self_training")


def _fingerprint(cfg, seed: int, data: DomainPair, toggles: AblationToggles, adversarial: bool) -> str:
    h = hashlib.sha256()
    for k, v in sorted(cfg.to_kv().items()):
        if k not in _LATE_KEYS and not k.startswith(("run.", "ablation.")):
            h.update(f"{k}={v}\n".encode())
    h.update(f"seed={seed} att={toggles.use_attention} dc={toggles.use_dual_classifiers} "
             f"adv={adversarial}\n".encode())
    for ds in (data.source, data.target):
        for arr in (ds.signals, ds.stages, ds.subject_ids):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(sorted(ds.splits.items())).encode())
    return h.hexdigest()


@dataclass
class StageSnapshot:
    """Complete training state at the end of the pre-training stage."""

    fingerprint: str
    model_state: dict
    best: tuple
    history: list
    losses: list
    step: int
    epoch: int
    opt_main: dict
    opt_d: dict | None


class _StagedRun:
    """Pre-training stage followed by self-training rounds.

    Keeps enough state between stages that the first stage can be
    snapshotted and resumed with different late-stage settings.
    """

    def __init__(self, cfg, seed: int, data: DomainPair, toggles: AblationToggles,
                 adversarial: bool, on_step: Callable | None = None):
        problems = validate_config(cfg)
        if problems:
            raise ConfigError("; ".join(problems))
        self.cfg, self.seed, self.data = cfg, seed, data
        self.toggles, self.adversarial, self.on_step = toggles, adversarial, on_step
        self.sched: TrainSchedule = cfg.schedule
        self.mode = "adast" if adversarial else "source-only"
        if adversarial:
            self.target_fit = data.target.without_labels("train")
            self.select_ds, self.select_route = data.target, "target"
        else:
            # the baseline never sees target data during fitting
            self.target_fit = None
            self.select_ds, self.select_route = data.source, "source"
        self.model = build_model(cfg, seed, toggles)
        self.result = RunResult(self.mode, seed, self.model)
        self.best = _Best()
        self.step = 0
        self.epoch = 0
        self.opt_main = self.opt_d = None
        self.stages_done = 0

    def fingerprint(self) -> str:
        return _fingerprint(self.cfg, self.seed, self.data, self.toggles, self.adversarial)

    def late_stages(self) -> list[int]:
        s = self.sched
        if not self.adversarial:
            return []
        rounds = s.self_train_rounds if self.toggles.use_self_training else 0
        return [s.epochs_per_round] * rounds

    def first_stage_epochs(self) -> int:
        s = self.sched
        return s.pretrain_epochs if self.adversarial else s.total_epochs

    def snapshot(self) -> StageSnapshot:
        if self.stages_done != 1:
            raise RuntimeError("snapshots are taken right after the first stage")
        return StageSnapshot(
            self.fingerprint(), self.model.state_dict(),
            (self.best.acc, self.best.epoch, dict(self.best.state)),
            list(self.result.history), list(self.result.losses), self.step, self.epoch,
            self.opt_main.state_dict(), self.opt_d.state_dict() if self.opt_d else None,
        )

    def restore(self, snap: StageSnapshot) -> None:
        if snap.fingerprint != self.fingerprint():
            raise ConfigError("snapshot was taken under a different configuration, seed or dataset")
        self.model.load_state_dict(snap.model_state)
        self.best.acc, self.best.epoch, state = snap.best
        self.best.state = dict(state)
        self.result.history = list(snap.history)
        self.result.losses = list(snap.losses)
        self.step, self.epoch = snap.step, snap.epoch
        self._make_optimizers()
        self.opt_main.load_state_dict(snap.opt_main)
        if self.opt_d is not None:
            self.opt_d.load_state_dict(snap.opt_d)
        self.stages_done = 1

    def _make_optimizers(self) -> None:
        self.opt_main = Adam(self.model.main_parameters(), self.cfg.optim)
        self.opt_d = (Adam(self.model.discriminator_parameters(), self.cfg.optim)
                      if self.adversarial else None)

    def run_stage(self, n_epochs: int) -> None:
        sched, cfg, model = self.sched, self.cfg, self.model
        pseudo_all = None
        if self.stages_done > 0:
            pseudo_all = predict_pseudo_labels(model, self.target_fit, "train")
        if self.opt_main is None or sched.restart_lr_each_stage:
            self._make_optimizers()
        source = self.data.source
        for stage_epoch in range(n_epochs):
            e_sched = stage_epoch if sched.restart_lr_each_stage else self.epoch
            lr = lr_schedule(e_sched, cfg.optim.lr, cfg.optim.decay_epoch, cfg.optim.decay_factor)
            self.opt_main.lr = lr
            if self.opt_d is not None:
                self.opt_d.lr = lr
            model.train()
            n_steps = n_batches(source, "train", sched.batch_size)
            src_it = _cycled(source, "train", sched.batch_size, self.seed, self.epoch)
            if self.adversarial:
                n_steps = max(n_steps, n_batches(self.target_fit, "train", sched.batch_size))
                trg_it = _cycled(self.target_fit, "train", sched.batch_size,
                                 self.seed + 7919, self.epoch)
            for _ in range(n_steps):
                xs, ys, _ = next(src_it)
                xt = pseudo = None
                if self.adversarial:
                    xt, _, it = next(trg_it)
                    if pseudo_all is not None:
                        pseudo = pseudo_all[it]
                report = train_step(model, (xs, ys), xt, pseudo, self.opt_d, self.opt_main,
                                    cfg.loss, self.step, adversarial=self.adversarial)
                self.result.losses.append((self.step, report))
                if self.on_step is not None:
                    self.on_step(self.step, model, report)
                self.step += 1
            acc, mf1, _ = evaluate(model, self.select_ds, "val", self.select_route)
            self.result.history.append((self.epoch, f"{self.select_route}_val", acc, mf1))
            self.best.offer(model, acc, self.epoch)
            log.debug("%s seed=%d epoch=%d val_acc=%.4f", self.mode, self.seed, self.epoch, acc)
            self.epoch += 1
        self.stages_done += 1

    def finish(self) -> RunResult:
        """Restore the best validation checkpoint and score the held-out test splits."""
        result, model = self.result, self.model
        model.load_state_dict(self.best.state)
        result.best_epoch = self.best.epoch
        # held-out evaluation: the only place target labels are read
        route = "target" if self.adversarial else "source"
        acc, mf1, cm = evaluate(model, self.data.target, "test", route)
        result.test_acc, result.test_mf1, result.test_cm = acc, mf1, cm
        result.history.append((self.best.epoch, "target_test", acc, mf1))
        s_acc, s_mf1, _ = evaluate(model, self.data.source, "test", "source")
        result.source_test_acc = s_acc
        result.history.append((self.best.epoch, "source_test", s_acc, s_mf1))
        return result


def _fit(cfg, seed: int, data: DomainPair, toggles: AblationToggles, adversarial: bool,
         on_step: Callable | None = None, resume: StageSnapshot | None = None) -> RunResult:
    run = _StagedRun(cfg, seed, data, toggles, adversarial, on_step)
    if resume is not None:
        run.restore(resume)
    else:
        run.run_stage(run.first_stage_epochs())
    snap = run.snapshot() if adversarial else None
    for n_epochs in run.late_stages():
        run.run_stage(n_epochs)
    result = run.finish()
    result.first_stage = snap
    return result


def run_adast(cfg, seed: int | None = None, data: DomainPair | None = None,
              toggles: AblationToggles | None = None, on_step: Callable | None = None,
              resume: StageSnapshot | None = None) -> RunResult:
    """Full adaptation run. ``result.first_stage`` holds the state after
    pre-training; pass it as ``resume`` to a run that differs only in
    self-training settings (lambda1, rounds) to skip recomputing it."""
    seed = cfg.run.seeds[0] if seed is None else seed
    data = data or prepare_data(cfg)
    return _fit(cfg, seed, data, toggles or cfg.ablation, adversarial=True,
                on_step=on_step, resume=resume)


def run_source_only(cfg, seed: int | None = None, data: DomainPair | None = None,
                    on_step: Callable | None = None) -> RunResult:
    seed = cfg.run.seeds[0] if seed is None else seed
    data = data or prepare_data(cfg)
    toggles = replace(cfg.ablation, use_self_training=False)
    return _fit(cfg, seed, data, toggles, adversarial=False, on_step=on_step)


def run_ablation(cfg, seed: int | None = None, data: DomainPair | None = None,
                 variants=ABLATION_VARIANTS) -> dict[str, RunResult]:
    """One run per toggle combination. Variants without self-training reuse
    the first stage of their self-training sibling when both are requested."""
    seed = cfg.run.seeds[0] if seed is None else seed
    data = data or prepare_data(cfg)
    out: dict[str, RunResult] = {}
    snaps: dict[tuple[bool, bool], StageSnapshot] = {}
    # self-training variants first so their first stage can be shared
    for v in sorted(variants, key=lambda v: not v.use_self_training):
        key = (v.use_attention, v.use_dual_classifiers)
        out[v.name] = run_adast(cfg, seed, data, v, resume=snaps.get(key))
        snaps.setdefault(key, out[v.name].first_stage)
    return {v.name: out[v.name] for v in variants}


def validate_config(cfg) -> list[str]:
    problems = []
    for part in (cfg.arch, cfg.loss, cfg.optim, cfg.schedule, cfg.synth):
        problems += part.validate()
    if cfg.arch.epoch_len != cfg.synth.epoch_len and not cfg.data.source_path:
        problems.append("arch.epoch_len must equal synth.epoch_len for synthetic data")
    if cfg.arch.n_classes != cfg.synth.n_classes and not cfg.data.source_path:
        problems.append("arch.n_classes must equal the number of synth.priors")
    return problems
