"""Command-line entry point: scans, sweeps, training, evaluation, ingestion.

Emits plot-data CSVs only (no rendering); every run writes a resolved-config
echo next to its outputs.  Exit codes: 0 success, 1 numeric failure,
2 configuration error, 3 malformed data / IO.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from . import manifold as mf
from .bound import BoundSweepConfig, bound_sweep
from .data import ToyImageDataset, ToyTaskConfig, make_toy_dataset
from .detector.checkpoint import load_checkpoint, save_checkpoint
from .detector.embeddings import predict_from_embeddings, read_embeddings
from .detector.model import RADetector
from .errors import EXIT_IO, DataFormatError, RadetError
from .evalharness import evaluate, robustness_sweep
from .shift import ShiftCurve, shift_scan

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("epsilon", "delta", "stderr", "ci_lo", "ci_hi")


def plot_emit(report, out_dir, prefix: str = "plot") -> list:
    """Write plot-data CSV files for a report object; returns written paths.

    ShiftCurve -> one curve panel file (shift-vs-epsilon schema).
    dict with 'sims'/'labels' arrays -> two-class similarity histogram.
    EvalReport-like (has .rows) -> AP-vs-degradation curve per kind.
    """
    out_dir = Path(out_dir)
    written = []

    def emit(name, header, rows):
        p = out_dir / f"{prefix}_{name}.csv"
        lines = [",".join(header)]
        lines += [",".join(f"{v:.10g}" if isinstance(v, float) else str(v)
                           for v in row) for row in rows]
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(p)

    if isinstance(report, ShiftCurve):
        emit("shift_curve", CURVE_COLUMNS,
             [[float(r[c]) for c in CURVE_COLUMNS] for r in report.to_rows()])
    elif isinstance(report, dict) and "sims" in report and "labels" in report:
        sims = np.asarray(report["sims"], dtype=float)
        labels = np.asarray(report["labels"], dtype=int)
        edges = np.linspace(-1.0, 1.0, 41)
        h_real, _ = np.histogram(sims[labels == 1], bins=edges)
        h_fake, _ = np.histogram(sims[labels == 0], bins=edges)
        emit("sim_hist", ("bin_lo", "bin_hi", "count_real", "count_fake"),
             [[float(edges[i]), float(edges[i + 1]), int(h_real[i]),
               int(h_fake[i])] for i in range(len(h_real))])
    elif hasattr(report, "rows"):
        if not report.rows:
            logger.warning("empty report: no plot data emitted")
            return written
        emit("degradation", ("kind", "strength", "acc", "ap"),
             [[r.kind, float(r.strength), float(r.acc), float(r.ap)]
              for r in report.rows])
    else:
        logger.warning("no plot emitter for %s", type(report).__name__)
    return written


def _crop_to(images: np.ndarray, hw: int, rng: np.random.Generator,
             random: bool) -> np.ndarray:
    """Crop H/W down to hw when the input is larger; no-op otherwise."""
    n, h, w, _ = images.shape
    if h <= hw and w <= hw:
        return images
    out = np.empty((n, hw, hw, images.shape[3]), dtype=images.dtype)
    for i in range(n):
        if random:
            top = rng.integers(0, h - hw + 1)
            left = rng.integers(0, w - hw + 1)
        else:
            top, left = (h - hw) // 2, (w - hw) // 2
        out[i] = images[i, top:top + hw, left:left + hw]
    return out


def _setup(config_path, output_dir, threads):
    cfg = cfgmod.load_config(config_path)
    if output_dir:
        cfg["output_dir"] = str(output_dir)
    if threads:
        cfg["threads"] = threads
    if cfg["threads"]:
        import torch
        torch.set_num_threads(int(cfg["threads"]))
    out = cfgmod.resolve_output_dir(cfg)
    cfgmod.echo_config(cfg, out)
    return cfg, out


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(),
                      default=None, help="TOML/JSON run config")(fn)
    fn = click.option("--output-dir", type=click.Path(), default=None,
                      help="overrides config/env output dir")(fn)
    fn = click.option("--threads", type=int, default=0,
                      help="parallelism budget (torch threads)")(fn)
    return fn


@click.group()
def main():
    """Robustness-asymmetry toolkit."""
    logging.basicConfig(level=logging.INFO, format="%(message)s")


def _run(body):
    try:
        body()
    except RadetError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except OSError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)


@main.command("shift-scan")
@_common
def cmd_shift_scan(config_path, output_dir, threads):
    """Differential-shift curve over the probe-magnitude grid."""
    def body():
        cfg, out = _setup(config_path, output_dir, threads)
        tb, pr = cfg["testbed"], cfg["probe"]
        rng = np.random.default_rng(cfg["seed"])
        model = cfgmod.build_manifold(cfg)
        enc = cfgmod.build_encoder(cfg, model)
        anchors = mf.make_training_set(model, tb["n_anchors"], rng)
        gen = mf.GenModel(anchors.anchors, tb["lam"], tb["eps0"],
                          tb["sigma_broad"])
        real_pts = mf.sample_real(model, pr["n_points"], rng)
        gen_pts = mf.gen_sample(gen, pr["n_points"], rng)
        curve = shift_scan(enc, real_pts, gen_pts,
                           np.asarray(pr["eps_grid"], dtype=float),
                           pr["k"], rng, law=pr["law"])
        files = plot_emit(curve, out, prefix="shift")
        click.echo(f"eps_turn={curve.eps_turn:g} "
                   f"interior={curve.has_interior_argmax}")
        for f in files:
            click.echo(f"wrote {f}")
    _run(body)


@main.command("bound-sweep")
@_common
def cmd_bound_sweep(config_path, output_dir, threads):
    """Memorization-grid validation of the shift lower bound."""
    def body():
        cfg, out = _setup(config_path, output_dir, threads)
        tb, bd = cfg["testbed"], cfg["bound"]
        enc = cfg["encoder"]
        sweep_cfg = BoundSweepConfig(
            seed=cfg["seed"], ambient_dim=tb["ambient_dim"],
            manifold_amplitude=tb["amplitude"], n_anchors=tb["n_anchors"],
            eps0=tb["eps0"], sigma_broad=tb["sigma_broad"],
            kappa_t=enc["kappa_t"], kappa_n=enc["kappa_n"],
            squash_radius=enc["squash_radius"],
            lam_grid=tuple(bd["lam_grid"]),
            probe_eps=bd["probe_eps"] or None, n_points=bd["n_points"],
            k_probe=bd["k_probe"], k_kl=bd["k_kl"], k_delta=bd["k_delta"],
            k_b=bd["k_b"])
        report = bound_sweep(sweep_cfg)
        (out / "bound_report.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / "bound_report.json").write_text(report.to_json(),
                                               encoding="utf-8")
        click.echo(f"rows={len(report.rows)} eps={report.eps:g} "
                   f"passed={report.passed}")
        if not report.passed:
            click.echo("bound check FAILED", err=True)
            sys.exit(1)
    _run(body)


@main.command("make-data")
@_common
@click.option("--name", default="toy_dataset.npz", help="output file name")
def cmd_make_data(config_path, output_dir, threads, name):
    """Synthesize the toy real/fake image dataset."""
    def body():
        cfg, out = _setup(config_path, output_dir, threads)
        d = cfg["data"]
        ds = make_toy_dataset(ToyTaskConfig(
            lam_img=d["lam_img"], image_hw=d["image_hw"],
            n_train=d["n_train"], n_test=d["n_test"], seed=cfg["seed"],
            spectrum_alpha=d["spectrum_alpha"], noise_std=d["noise_std"],
            fake_texture_mix=d["fake_texture_mix"]))
        path = out / name
        ds.save(path)
        click.echo(f"wrote {path} "
                   f"(train {len(ds.train_labels)}, test {len(ds.test_labels)})")
    _run(body)


@main.command("train")
@_common
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--checkpoint", "ckpt_name", default="model.radet")
def cmd_train(config_path, output_dir, threads, dataset_path, ckpt_name):
    """Train the detector and write a checkpoint plus loss trace."""
    def body():
        cfg, out = _setup(config_path, output_dir, threads)
        tr = cfg["train"]
        ds = ToyImageDataset.load(dataset_path)
        model = RADetector(
            eps_pix=tr["eps_pix"], gamma=tr["gamma"], lr=tr["lr"],
            batch_size=tr["batch_size"], epochs=tr["epochs"],
            seed=cfg["seed"], emb_dim=tr["emb_dim"],
            branches=tuple(tr["branches"]), encoder_seed=tr["encoder_seed"],
            encoder_gain=tr["encoder_gain"], image_hw=ds.config.image_hw,
            channels=ds.config.channels)
        rng = np.random.default_rng(cfg["seed"])
        X = _crop_to(ds.train_images, model.image_hw, rng, random=True)
        model.fit(X, ds.train_labels)
        path = out / ckpt_name
        save_checkpoint(model, path)
        (out / "loss_trace.json").write_text(
            json.dumps(model.trace_, indent=2), encoding="utf-8")
        s_r = [v for v in model.trace_["s_real"][-20:] if np.isfinite(v)]
        s_f = [v for v in model.trace_["s_fake"][-20:] if np.isfinite(v)]
        plot_emit({"sims": np.array(s_r + s_f),
                   "labels": np.array([1] * len(s_r) + [0] * len(s_f))},
                  out, prefix="train")
        click.echo(f"wrote {path} "
                   f"(final bce={model.trace_['loss_bce'][-1]:.4f} "
                   f"ra={model.trace_['loss_ra'][-1]:.4f})")
    _run(body)


def _load_eval_inputs(cfg, dataset_path, checkpoint_path, split):
    ds = ToyImageDataset.load(dataset_path)
    model = load_checkpoint(checkpoint_path)
    if split == "train":
        images, labels = ds.train_images, ds.train_labels
    else:
        images, labels = ds.test_images, ds.test_labels
    rng = np.random.default_rng(cfg["seed"])
    return model, _crop_to(images, model.image_hw, rng, random=False), labels


@main.command("eval")
@_common
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(),
              required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test")
def cmd_eval(config_path, output_dir, threads, dataset_path, checkpoint_path,
             split):
    """ACC/AP on a labeled dataset split."""
    def body():
        cfg, out = _setup(config_path, output_dir, threads)
        model, images, labels = _load_eval_inputs(cfg, dataset_path,
                                                  checkpoint_path, split)
        report = evaluate(model, {split: (images, labels)},
                          branch_ablation=cfg["eval"]["branch_ablation"])
        (out / "eval_report.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / "eval_report.json").write_text(report.to_json(),
                                              encoding="utf-8")
        click.echo(f"acc={report.mean_acc:.2f}% ap={report.mean_ap:.2f}%")
    _run(body)


@main.command("robustness")
@_common
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(),
              required=True)
def cmd_robustness(config_path, output_dir, threads, dataset_path,
                   checkpoint_path):
    """Degradation sweep (blur and compression grids) with branch ablation."""
    def body():
        cfg, out = _setup(config_path, output_dir, threads)
        model, images, labels = _load_eval_inputs(cfg, dataset_path,
                                                  checkpoint_path, "test")
        ev = cfg["eval"]
        grid = tuple([("blur", float(s)) for s in ev["blur_sigmas"]]
                     + [("jpeg", float(q)) for q in ev["jpeg_qfs"]])
        report = robustness_sweep(model, "test", images, labels, grid=grid,
                                  branch_ablation=ev["branch_ablation"])
        (out / "robustness_report.csv").write_text(report.to_csv(),
                                                   encoding="utf-8")
        (out / "robustness_report.json").write_text(report.to_json(),
                                                    encoding="utf-8")
        plot_emit(report, out, prefix="robustness")
        for r in report.rows:
            click.echo(f"{r.kind:>5} {r.strength:>6g}  acc={r.acc:6.2f}%  "
                       f"ap={r.ap:6.2f}%")
    _run(body)


@main.command("ingest-embeddings")
@_common
@click.option("--path", "emb_path", type=click.Path(), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(),
              default=None, help="score the rows with a trained detector")
def cmd_ingest(config_path, output_dir, threads, emb_path, checkpoint_path):
    """Validate an embedding file and print (optionally score) its index."""
    def body():
        cfg, out = _setup(config_path, output_dir, threads)
        emb = read_embeddings(emb_path)
        n, d = emb.clean.shape
        res = "none" if emb.residual is None else str(emb.residual.shape[1])
        click.echo(f"rows={n} dim={d} residual={res} "
                   f"real={int(emb.labels.sum())} "
                   f"fake={int((1 - emb.labels).sum())}")
        if checkpoint_path:
            model = load_checkpoint(checkpoint_path)
            scores = predict_from_embeddings(model, emb.clean, emb.perturbed,
                                             emb.residual)
            (out / "embedding_scores.csv").write_text(
                "index,label,score\n" + "".join(
                    f"{i},{int(emb.labels[i])},{scores[i]:.10g}\n"
                    for i in range(n)), encoding="utf-8")
            click.echo(f"wrote {out / 'embedding_scores.csv'}")
    _run(body)


if __name__ == "__main__":
    main()
