"""Command-line surface tying the modules into reproducible experiments.

Commands: gen-data, train, integrate, eval, sweep, diagnose, grad-check.
Every command takes --config and writes its effective configuration next to
its artifacts; fixed seeds with --precision f64 make runs byte-reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, evalx, llmbridge, persist
from .model import ModelConfig, init_params, param_count
from .numcore import AdamState, grad_check
from .runconfig import RunConfig, load_run_config, save_effective_config
from .synthgen import TASKS
from .training import TrainState, rng_for, run_curriculum
from . import dataio

PRECISIONS = {"f32": np.float32, "f64": np.float64}


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None, help="seed override (u64)")
    p.add_argument("--out", default=None, help="artifact output directory")
    p.add_argument("--checkpoint", default=None, help="checkpoint to load")
    p.add_argument("--precision", choices=sorted(PRECISIONS), default="f64")


def _out_dir(args) -> Path:
    if not args.out:
        raise ValueError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, content: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(content)


def _metrics_csv(rows: list[dict]) -> str:
    lines = ["step,task,loss_lm,loss_cl,lr"]
    for r in rows:
        lines.append(f"{r['step']},{r['task']},{r['loss_lm']!r},{r['loss_cl']!r},{r['lr']!r}")
    return "\n".join(lines) + "\n"


def _load_docs(path: str, what: str):
    if not path:
        raise ValueError(f"config data.{what} is not set")
    return dataio.load_dataset(path)


def cmd_gen_data(args, config: RunConfig) -> int:
    out = _out_dir(args)
    gen_cfg = config.data.gen_config()
    if args.seed is not None:
        gen_cfg = dataclasses.replace(gen_cfg, seed=args.seed)
    docs = dataio.generate_dataset(gen_cfg, config.data.count)
    dataio.write_dataset(out, docs, gen_cfg)
    save_effective_config(config, out / "effective-config.json")
    print(f"gen-data: wrote {len(docs)} documents to {out}")
    return 0


def _train_datasets(config: RunConfig):
    docs = _load_docs(config.data.train_dir, "train_dir")
    return {task: docs for task in TASKS}


def cmd_train(args, config: RunConfig) -> int:
    out = _out_dir(args)
    dtype = PRECISIONS[args.precision]
    datasets = _train_datasets(config)
    seed = args.seed if args.seed is not None else 0
    phases = [p.curriculum_phase() for p in config.train.phases]
    if args.checkpoint:
        state, model_cfg, _ = persist.load_train_state(args.checkpoint)
    else:
        model_cfg = config.model
        params = init_params(model_cfg, rng_for(seed, "init"), dtype)
        base_lr = phases[0].lr if phases else 1e-3
        state = TrainState(params=params, adam=AdamState(lr=base_lr), seed=seed)
    if args.steps is not None:
        clipped = []
        remaining = args.steps
        for phase in phases:
            take = min(phase.steps, remaining)
            clipped.append(dataclasses.replace(phase, steps=take))
            remaining -= take
        phases = clipped

    def on_phase_end(idx, phase, st):
        persist.save_train_state(out / f"checkpoint_phase{idx}.ckpt", st, model_cfg)

    rows = run_curriculum(
        phases, datasets, state, model_cfg,
        log_interval=config.train.log_interval,
        noise_drop_max=config.train.noise_drop_max,
        on_phase_end=on_phase_end,
    )
    persist.save_train_state(out / "checkpoint_final.ckpt", state, model_cfg)
    _write(out / "metrics.csv", _metrics_csv(rows))
    summary = {
        "steps": state.step,
        "ema_lm": state.ema_lm,
        "ema_cl": state.ema_cl,
        "param_count": param_count(model_cfg),
    }
    if config.data.eval_dir:
        val_docs = _load_docs(config.data.eval_dir, "eval_dir")
        report = evalx.evaluate(
            state.params, model_cfg, val_docs,
            seed=config.eval.seed, questions_per_doc=config.train.val_questions,
        )
        summary["val"] = report.summary()
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_effective_config(config, out / "effective-config.json")
    print(f"train: {state.step} steps, checkpoint at {out / 'checkpoint_final.ckpt'}")
    return 0


def cmd_eval(args, config: RunConfig) -> int:
    out = _out_dir(args)
    if not args.checkpoint:
        raise ValueError("--checkpoint is required for eval")
    state, model_cfg, _ = persist.load_train_state(args.checkpoint)
    docs = _load_docs(config.data.eval_dir or config.data.train_dir, "eval_dir")
    seed = args.seed if args.seed is not None else config.eval.seed
    report = evalx.evaluate(
        state.params, model_cfg, docs,
        corrupt_rate=config.eval.corrupt_rate,
        aux_disabled=config.eval.aux_disabled,
        seed=seed,
        questions_per_doc=config.eval.questions_per_doc,
    )
    _write(out / "eval.json", report.to_json() + "\n")
    save_effective_config(config, out / "effective-config.json")
    print(f"eval: em={report.em!r} anls={report.mean_anls!r} ned={report.mean_ned!r}")
    return 0


def cmd_sweep(args, config: RunConfig) -> int:
    out = _out_dir(args)
    if not args.checkpoint:
        raise ValueError("--checkpoint is required for sweep")
    state, model_cfg, _ = persist.load_train_state(args.checkpoint)
    docs = _load_docs(config.data.eval_dir or config.data.train_dir, "eval_dir")
    seed = args.seed if args.seed is not None else config.eval.seed
    reports = evalx.robustness_sweep(
        state.params, model_cfg, docs,
        drop_rates=list(config.eval.drop_rates),
        aux_disabled=config.eval.aux_disabled,
        corrupt_rate=config.eval.corrupt_rate,
        seed=seed,
        questions_per_doc=config.eval.questions_per_doc,
    )
    _write(out / "sweep.csv", evalx.sweep_csv(reports))
    _write(
        out / "sweep.json",
        json.dumps([r.summary() for r in reports], indent=2, sort_keys=True) + "\n",
    )
    save_effective_config(config, out / "effective-config.json")
    print(f"sweep: {len(reports)} rates -> {out / 'sweep.csv'}")
    return 0


def cmd_integrate(args, config: RunConfig) -> int:
    out = _out_dir(args)
    if not args.checkpoint:
        raise ValueError("--checkpoint (standalone model) is required for integrate")
    state, model_cfg, _ = persist.load_train_state(args.checkpoint)
    docs = _load_docs(config.data.train_dir, "train_dir")
    seed = args.seed if args.seed is not None else 0
    icfg = config.integrate
    dtype = PRECISIONS[args.precision]

    if icfg.lm_path:
        lm = persist.load_frozen_lm(icfg.lm_path)
    else:
        corpus = [doc.caption for doc in docs]
        for doc in docs:
            corpus.append(doc.reading_text)
            for q, a in doc.qa:
                corpus.extend((q, a))
        lm = llmbridge.pretrain_toy_lm(
            corpus, model_cfg, seed=seed, lr=icfg.lm_lr,
            batch_size=icfg.lm_batch_size, max_steps=icfg.lm_max_steps,
            target_loss=icfg.lm_target_loss, dtype=dtype,
        )
        persist.save_frozen_lm(out / "lm.ckpt", lm)

    samples = llmbridge.qa_samples(docs)
    rng = rng_for(seed, "integration-split")
    order = rng.permutation(len(samples))
    n_held = max(1, int(len(samples) * icfg.eval_fraction))
    held = [samples[int(i)] for i in order[:n_held]]
    train_samples = [samples[int(i)] for i in order[n_held:]]

    istate = llmbridge.IntegrationState.create(state.params, lm, model_cfg, lr=icfg.lr, seed=seed)
    before = persist.init_tensor_dump(istate.params)
    loss_start = llmbridge.integration_eval_loss(istate, held)
    rows = []
    for _ in range(icfg.steps):
        step_rng = rng_for(seed, "integration-batch", istate.step)
        picks = step_rng.integers(len(train_samples), size=icfg.batch_size)
        batch = [train_samples[int(i)] for i in picks]
        loss = llmbridge.integrate_train_step(istate, batch)
        if istate.step % max(1, config.train.log_interval) == 0 or istate.step == icfg.steps:
            rows.append({"step": istate.step, "loss": loss})
    loss_end = llmbridge.integration_eval_loss(istate, held)
    changed = sorted(
        n for n, arr in before.items()
        if n not in istate.frozen and not np.array_equal(arr, istate.params[n].data)
    )
    persist.save_integration_state(out / "integration_final.ckpt", istate)
    _write(
        out / "integrate_metrics.csv",
        "step,loss\n" + "".join(f"{r['step']},{r['loss']!r}\n" for r in rows),
    )
    summary = {
        "steps": istate.step,
        "held_out_loss_start": loss_start,
        "held_out_loss_end": loss_end,
        "trainable_changed": len(changed),
        "frozen_count": len(istate.frozen),
        "prompt_rows": model_cfg.num_queries,
    }
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_effective_config(config, out / "effective-config.json")
    print(
        f"integrate: held-out loss {loss_start!r} -> {loss_end!r} over {istate.step} steps"
    )
    return 0


def cmd_diagnose(args, config: RunConfig) -> int:
    out = _out_dir(args)
    if not args.checkpoint:
        raise ValueError("--checkpoint is required for diagnose")
    state, model_cfg, _ = persist.load_train_state(args.checkpoint)
    docs = _load_docs(config.data.eval_dir or config.data.train_dir, "eval_dir")
    seed = args.seed if args.seed is not None else config.eval.seed
    dump = diagnostics.collect_embedding_dump(state.params, model_cfg, docs)
    count = min(3, dump.matrix.shape[1], max(1, dump.matrix.shape[0]))
    pca = diagnostics.pca_components(dump, count)
    edges, counts, variance = diagnostics.cosine_histogram(
        dump, sample_pairs=min(20_000, 20 * max(1, dump.matrix.shape[0])), bins=80,
        rng=np.random.default_rng(seed),
    )
    _write(out / "pca.csv", diagnostics.pca_csv(dump, pca))
    _write(out / "cosine_hist.csv", diagnostics.histogram_csv(edges, counts))
    _write(
        out / "fit.json",
        json.dumps(
            {
                "variance": variance,
                "rows": int(dump.matrix.shape[0]),
                "rank_deficient": pca.rank_deficient,
                "explained_ratio": [float(x) for x in pca.explained_ratio],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    save_effective_config(config, out / "effective-config.json")
    print(f"diagnose: fitted cosine variance {variance!r} over {dump.matrix.shape[0]} rows")
    return 0


def _grad_check_loss_builder(config: RunConfig, seed: int):
    """Full-pipeline closure (the training batch objective) on a tiny batch."""
    from .synthgen import GenConfig, generate_kv_doc, make_task_samples
    from .training import batch_loss

    model_cfg = config.model
    gen_cfg = config.data.gen_config()
    docs = [
        generate_kv_doc(dataclasses.replace(gen_cfg, seed=seed + i), np.random.default_rng(seed + i))
        for i in range(2)
    ]
    samples = []
    for i, doc in enumerate(docs):
        samples.extend(make_task_samples(doc, {"QA", "TR"}, rng=np.random.default_rng(seed + 100 + i)))
    params = init_params(model_cfg, rng_for(seed, "grad-check-init"), np.float64)
    pair_seed = seed + 7

    def fn():
        total, _, _, _ = batch_loss(params, samples, model_cfg, np.random.default_rng(pair_seed))
        return total

    return fn, params


def cmd_grad_check(args, config: RunConfig) -> int:
    out = _out_dir(args)
    if args.precision != "f64":
        raise ValueError("grad-check requires --precision f64")
    seed = args.seed if args.seed is not None else 0
    fn, params = _grad_check_loss_builder(config, seed)
    report = grad_check(fn, params, max_coords=args.coords, rng=np.random.default_rng(seed))
    _write(
        out / "grad_check.json",
        json.dumps(
            {
                "max_rel_err": report.max_rel_err,
                "checked": report.checked,
                "tol": report.tol,
                "passed": report.passed,
                "failures": [
                    {"param": n, "index": i, "analytic": a, "numeric": f, "rel": r}
                    for n, i, a, f, r in report.failures
                ],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    save_effective_config(config, out / "effective-config.json")
    print(report.summary())
    if not report.passed:
        raise FloatingPointError(f"gradient check failed: max rel err {report.max_rel_err:.3e}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "integrate": cmd_integrate,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cream",
        description="Synthetic document VQA: data generation, training, "
        "frozen-LM integration, evaluation, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _common_flags(p)
        if name == "train":
            p.add_argument("--steps", type=int, default=None, help="cap total training steps")
        if name == "grad-check":
            p.add_argument("--coords", type=int, default=200, help="coordinates to sample (>= 200)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = None
    try:
        config = load_run_config(args.config)
        return COMMANDS[args.command](args, config)
    except Exception as err:  # one-line machine-parsable failure
        print(f"error: {type(err).__name__}: {err}".replace("\n", " | "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
