"""Staged compression pipeline and evaluation."""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines.clustered import clustered_baseline_pipeline
from .config import PipelineConfig
from .convert import quantize_codebooks, to_cat, to_qat, to_ternary
from .data import Split, batches, make_dataset
from .deploy import export_lut, get_profile, manifest_json
from .errors import ContractError
from .metrics import (ClassificationMetrics, DeployMetrics, EnergyModel, classification_metrics,
                      energy_mj, latency_s, network_size_mb)
from .modelfile import save_model
from .network import Network, build_network
from .pruning import PruneReport, compute_saliency, prune_channels
from .snn import LifConfig
from .training import TrainLog, train


def lif_from_config(cfg: PipelineConfig) -> LifConfig:
    s = cfg.snn
    return LifConfig(beta=s.beta, u_thr=s.u_thr, t_steps=s.t_steps, surrogate_alpha=s.surrogate_alpha,
                     readout=s.readout)


def build_from_config(cfg: PipelineConfig) -> Network:
    d, a = cfg.data, cfg.arch
    net = build_network((d.channels, d.height, d.width), a.block_list(), d.classes, lif_from_config(cfg),
                        kernel=a.kernel, pad=a.padding, pool=a.pool, seed=cfg.run.seed, init_gain=a.init_gain)
    net.config_hash = cfg.hash()
    return net


@dataclass
class RunContext:
    """Everything a stage needs besides the model itself."""

    cfg: PipelineConfig
    train: Split
    test: Split
    out_dir: Path | None = None
    log: TrainLog = field(default_factory=TrainLog)
    prune_report: PruneReport | None = None
    lut_manifest: dict | None = None
    step: int = 0

    @classmethod
    def create(cls, cfg: PipelineConfig, out_dir=None) -> "RunContext":
        tr, te = make_dataset(cfg.data, cfg.run.seed)
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        return cls(cfg, tr, te, out)

    def calibration(self) -> list:
        rng = np.random.default_rng([self.cfg.run.seed, 7])
        it = batches(self.train, self.cfg.run.batch_size, rng)
        return [b for _, b in zip(range(self.cfg.prune.calib_batches), it)]

    def checkpoint(self, name: str, net: Network):
        self.step += 1
        if self.out_dir is not None:
            ck = self.out_dir / "checkpoints"
            ck.mkdir(exist_ok=True)
            save_model(net, ck / f"{self.step:02d}-{name.replace(':', '-')}.snnc")


def _train_stage(net: Network, ctx: RunContext, stage: str, label: str | None = None) -> Network:
    st, cfg = ctx.cfg.stage(stage), ctx.cfg
    return train(net, ctx.train, ctx.test, epochs=st.epochs, lr=st.lr, weight_decay=st.weight_decay,
                 batch_size=cfg.run.batch_size, seed=cfg.run.seed, stage=label or stage, log=ctx.log,
                 beta_commit=cfg.cat.beta_commit, codebook_task_grad=cfg.cat.codebook_task_grad,
                 reseed_dead=cfg.cat.reseed_dead)


def _payloads(net: Network) -> str:
    return ",".join(sorted({layer.mode for layer in net.layers}))


def run_stage(net: Network, stage: str, ctx: RunContext) -> Network:
    """Apply one stage to ``net`` (in place where possible) and checkpoint the result."""
    cfg = ctx.cfg
    modes = {layer.mode for layer in net.layers}

    def need(allowed):
        if not modes <= set(allowed):
            raise ContractError(f"stage '{stage}' is incompatible with model payload '{_payloads(net)}'")

    if stage == "fp32-train":
        need(("fp",))
        _train_stage(net, ctx, "fp32-train")
    elif stage == "qat":
        need(("fp", "qat"))
        to_qat(net, cfg.cluster.qat_bits)
        _train_stage(net, ctx, "qat")
    elif stage == "cluster":
        need(("fp",))
        net = clustered_baseline_pipeline(cfg, ctx.train, ctx.test, ctx.log, checkpoint=ctx.checkpoint)
        net.config_hash = cfg.hash()
    elif stage == "cat":
        need(("fp", "qat", "cat"))
        to_cat(net, cfg.cat.m, cfg.cat.bitwidth, cfg.cat.quant_mode, cfg.run.seed)
        _train_stage(net, ctx, "cat")
    elif stage == "ternary":
        need(("fp", "qat", "ternary"))
        if "ternary" not in modes:
            to_ternary(net, cfg.ternary.threshold_frac)
        _train_stage(net, ctx, "ternary")
    elif stage == "fsc-prune":
        sal = compute_saliency(net, cfg.prune.criterion, ctx.calibration())
        net, ctx.prune_report = prune_channels(net, sal, cfg.prune.ratio)
    elif stage == "finetune":
        _train_stage(net, ctx, "finetune")
    elif stage == "quantize-codebook":
        need(("cat",))
        quantize_codebooks(net, cfg.cat.bitwidth, cfg.cat.quant_mode)
    elif stage == "export":
        if ctx.out_dir is not None:
            profile = get_profile(cfg.deploy.profile)
            ctx.lut_manifest = export_lut(net, ctx.out_dir / "model.lut", profile)
    else:
        raise ContractError(f"unknown stage {stage!r}")
    net.provenance.append(stage)
    ctx.checkpoint(stage, net)
    return net


def run_pipeline(cfg: PipelineConfig, out_dir=None, net: Network | None = None) -> tuple[Network, RunContext]:
    """Run every stage in ``cfg.run.stages`` and write the artifacts to ``out_dir``.

    Artifacts: ``checkpoints/``, ``model.snnc``, ``metrics.csv`` (per-epoch
    log, no wall-clock columns so reruns are byte-identical),
    ``prune_report.json`` when a prune ran, and ``model.lut`` on export.
    """
    ctx = RunContext.create(cfg, out_dir)
    net = build_from_config(cfg) if net is None else net
    for stage in cfg.run.stages:
        net = run_stage(net, stage, ctx)
    if ctx.out_dir is not None:
        write_artifacts(net, ctx)
    return net, ctx


def write_artifacts(net: Network, ctx: RunContext):
    save_model(net, ctx.out_dir / "model.snnc")
    (ctx.out_dir / "metrics.csv").write_text(ctx.log.to_csv())
    if ctx.prune_report is not None:
        (ctx.out_dir / "prune_report.json").write_text(json.dumps(ctx.prune_report.to_dict(), sort_keys=True, indent=1))
    if ctx.lut_manifest is not None:
        (ctx.out_dir / "model.lut.json").write_text(manifest_json(ctx.lut_manifest))


@dataclass
class EvalResult:
    mean: dict
    std: dict | None
    runs: list
    classification: ClassificationMetrics

    def row(self, model: str) -> dict:
        return {"model": model, **self.mean}


EVAL_FIELDS = ("perf_acc", "perf_f1", "latency_s", "energy_mj", "size_mb", "dr_acc", "dr_f1")


def evaluate(net: Network, test: Split, repeats: int = 5, cfg: PipelineConfig | None = None,
             seed: int = 0) -> EvalResult:
    """Classification and deployability metrics over ``repeats`` passes in shuffled order."""
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    cfg = cfg or PipelineConfig()
    d = cfg.deploy
    em = EnergyModel(d.e_mac_pj, d.e_ac_pj, d.spike_rate, net.lif.t_steps)
    size = network_size_mb(net, d.size_mode)
    bs = cfg.run.batch_size
    runs, cls = [], None
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        order = rng.permutation(len(test))
        x, y = test.x[order], test.y[order]
        cls = classification_metrics(net.predict(x, batch_size=bs), y, net.n_classes)
        lat_batches = [x[i:i + bs] for i in range(0, min(len(x), bs * d.latency_batches), bs)]
        energy = energy_mj(net, x[:bs], em)
        m = DeployMetrics(cls.accuracy, cls.f1, latency_s(net, lat_batches), energy, size)
        runs.append({k: getattr(m, k) for k in EVAL_FIELDS})
    # statistics works in exact arithmetic, so identical repeats give a std of exactly 0
    mean = {k: statistics.fmean(r[k] for r in runs) for k in EVAL_FIELDS}
    std = {k: statistics.pstdev([r[k] for r in runs]) for k in EVAL_FIELDS} if repeats > 1 else None
    return EvalResult(mean, std, runs, cls)


def deterministic_summary(result: EvalResult) -> dict:
    """Eval fields that do not depend on wall-clock time."""
    return {k: result.mean[k] for k in ("perf_acc", "perf_f1", "energy_mj", "size_mb")}


__all__ = ["RunContext", "EvalResult", "build_from_config", "run_stage", "run_pipeline", "evaluate",
           "lif_from_config", "write_artifacts"]
