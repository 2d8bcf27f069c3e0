"""Batch pipeline driver: one binary, one subcommand per stage.

Exit codes: 0 success, 1 runtime/input failure (message names the path),
2 configuration error (message names the key).  Thread counts must be fixed
before numpy loads, so this module imports the numeric stack lazily.
"""

import argparse
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _peek_threads(argv):
    """Thread count from DEEPLIGHT_THREADS, else a --threads flag."""
    env = os.environ.get("DEEPLIGHT_THREADS")
    if env:
        return env
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--threads="):
            return arg.split("=", 1)[1]
    return None


def _apply_threads(argv):
    n = _peek_threads(argv)
    if n is None:
        return
    if not n.isdigit() or int(n) < 1:
        raise SystemExit(f"deeplight: --threads must be a positive integer, got {n!r}")
    for var in _THREAD_VARS:
        os.environ[var] = n


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _load_config(args):
    from .config import RunConfig, load_config, split_seed
    import dataclasses

    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    seed = getattr(args, "seed", None)
    if seed is not None:
        ph_seed, tr_seed, la_seed = split_seed(seed, 3)
        cfg = dataclasses.replace(
            cfg,
            phantom=dataclasses.replace(cfg.phantom, seed=ph_seed),
            train=dataclasses.replace(cfg.train, seed=tr_seed),
            lasso=dataclasses.replace(cfg.lasso, seed=la_seed),
        )
    return cfg


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_csv(path, header, rows):
    import csv

    def cell(v):
        return repr(float(v)) if isinstance(v, float) else v

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([cell(v) for v in row])


def _design_from_sidecar(meta):
    import numpy as np
    from .phantom import BlockDesign

    labels = np.asarray(meta["labels"], dtype=int)
    return BlockDesign(
        blocks=tuple((int(s), float(o), float(d)) for s, o, d in meta["blocks"]),
        tr_s=float(meta["tr_s"]),
        duration_s=float(meta["duration_s"]),
        n_trs=len(labels),
        labels=labels,
        within_block_index=np.asarray(meta["within"], dtype=int),
    )


def _load_runs(data_dir):
    """All sub-*.vol runs plus sidecars, grouped into subject objects."""
    from types import SimpleNamespace
    from .volio import read_vol1

    if not os.path.isdir(data_dir):
        raise FileNotFoundError(data_dir)
    names = sorted(f for f in os.listdir(data_dir)
                   if f.startswith("sub-") and f.endswith(".vol"))
    if not names:
        from .errors import InputError
        raise InputError(f"{data_dir}: no run volumes (sub-*.vol) found")
    subjects = {}
    header = None
    for name in names:
        vol = read_vol1(os.path.join(data_dir, name))
        meta = _read_json(os.path.join(data_dir, name[:-4] + ".json"))
        if header is None:
            header = (vol.grid, vol.voxel_mm, vol.tr_s)
        run = SimpleNamespace(
            volumes=vol.data,
            labels=_as_int_array(meta["labels"]),
            design=_design_from_sidecar(meta),
            meta=meta,
            name=name[:-4],
        )
        sid = int(meta["subject"])
        subjects.setdefault(sid, SimpleNamespace(
            subject_id=sid, runs=[], is_train=bool(meta["is_train"]))).runs.append(run)
    ordered = [subjects[k] for k in sorted(subjects)]
    dataset = SimpleNamespace(
        subjects=ordered,
        train_subjects=[s for s in ordered if s.is_train],
        test_subjects=[s for s in ordered if not s.is_train],
        grid=header[0], voxel_mm=header[1], tr_s=header[2],
    )
    return dataset


def _as_int_array(values):
    import numpy as np
    return np.asarray(values, dtype=int)


def _load_model(path):
    import numpy as np
    from .model import DecoderSpec, load_params

    params = load_params(path, dtype=np.float32)
    meta = _read_json(path + ".json")
    spec = DecoderSpec(in_plane=tuple(meta["in_plane"]),
                       n_states=int(meta["n_states"]),
                       hidden=int(meta["hidden"]),
                       channels=tuple(meta["channels"]),
                       strides=tuple(meta["strides"]))
    return params, spec, meta


def _window_set(subjects, window):
    from .training import window_samples
    return window_samples(subjects, window)


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phantom(args):
    import numpy as np
    from .phantom import STATE_NAMES, generate_phantom

    cfg = _load_config(args)
    spec = cfg.phantom
    out = _out_dir(args)
    ds = generate_phantom(spec)
    for subj in ds.subjects:
        for r, run in enumerate(subj.runs):
            stem = f"sub-{subj.subject_id:02d}_run-{r}"
            _write_vol(os.path.join(out, stem + ".vol"), run.volumes,
                       spec.voxel_mm, spec.tr_s)
            _write_json(os.path.join(out, stem + ".json"), {
                "subject": subj.subject_id,
                "run": r,
                "is_train": subj.is_train,
                "tr_s": spec.tr_s,
                "voxel_mm": spec.voxel_mm,
                "duration_s": run.design.duration_s,
                "labels": [int(v) for v in run.labels],
                "within": [int(v) for v in run.design.within_block_index],
                "blocks": [[int(s), float(o), float(d)] for s, o, d in run.design.blocks],
                "states": list(STATE_NAMES),
            })
    for state, mask in sorted(ds.target_masks.items()):
        _write_vol(os.path.join(out, f"target_state-{state}.vol"),
                   mask.astype(np.float32), spec.voxel_mm, spec.tr_s)
    _write_json(os.path.join(out, "phantom.json"), {
        "grid": list(spec.grid), "voxel_mm": spec.voxel_mm, "tr_s": spec.tr_s,
        "seed": spec.seed, "amplitude": spec.amplitude,
        "noise_sigma": spec.noise_sigma, "baseline": spec.baseline,
        "train_subjects": spec.n_train_subjects,
        "test_subjects": spec.n_test_subjects,
        "runs_per_subject": spec.runs_per_subject,
        "states": list(STATE_NAMES),
    })
    return 0


def _write_vol(path, data, voxel_mm, tr_s):
    from .volio import write_vol1
    write_vol1(path, data, voxel_mm, tr_s)


def cmd_preprocess(args):
    import dataclasses
    import numpy as np
    from .preprocess import preprocess_dataset

    cfg = _load_config(args)
    ds = _load_runs(args.data)
    out = _out_dir(args)
    pcfg = dataclasses.replace(cfg.preprocess, voxel_mm=ds.voxel_mm, tr_s=ds.tr_s)
    runs = [run for subj in ds.subjects for run in subj.runs]
    processed, mask = preprocess_dataset([r.volumes for r in runs], pcfg)
    box = [[int(lo), int(hi)] for lo, hi in mask.box]
    for run, clean in zip(runs, processed):
        _write_vol(os.path.join(out, run.name + ".vol"),
                   clean.astype(np.float32), ds.voxel_mm, ds.tr_s)
        meta = dict(run.meta)
        meta["crop_box"] = box
        _write_json(os.path.join(out, run.name + ".json"), meta)
    _write_vol(os.path.join(out, "mask.vol"), mask.grid.astype(np.float32),
               ds.voxel_mm, ds.tr_s)
    _write_json(os.path.join(out, "mask.json"), {
        "box": box, "n_voxels": int(mask.grid.sum()),
        "full_grid": list(mask.grid.shape),
    })
    return 0


def cmd_train(args):
    from .model import DecoderSpec, save_params, save_params_sidecar
    from .phantom import STATE_NAMES
    from .training import phantom_train_data, train

    cfg = _load_config(args)
    ds = _load_runs(args.data)
    out = _out_dir(args)
    data = phantom_train_data(ds, window=cfg.fit.window,
                              val_subjects=cfg.fit.val_subjects)
    spec = DecoderSpec(in_plane=ds.grid[:2], n_states=len(STATE_NAMES),
                       hidden=cfg.net.hidden, channels=cfg.net.channels,
                       strides=cfg.net.strides)
    params, report = train(data, cfg.train, spec)
    model_path = os.path.join(out, "model.dlp")
    save_params(params, model_path)
    save_params_sidecar(model_path, spec, extra={
        "states": list(STATE_NAMES),
        "best_epoch": report.best_epoch,
        "stopped_epoch": report.stopped_epoch,
        "window": list(cfg.fit.window),
    })
    report.to_csv(os.path.join(out, "training.csv"))
    return 0


def cmd_evaluate(args):
    import numpy as np
    from .training import SampleSet, accuracy_by_block_time, evaluate

    cfg = _load_config(args)
    ds = _load_runs(args.data)
    params, spec, meta = _load_model(args.model)
    out = _out_dir(args)
    subjects = ds.test_subjects or ds.subjects
    samples = _window_set(subjects, cfg.fit.window)
    accuracy, confusion = evaluate(params, samples, spec)
    states = meta["states"]

    runs = [run for subj in subjects for run in subj.runs]
    all_trs = SampleSet(
        volumes=np.concatenate([r.volumes for r in runs]),
        labels=np.concatenate([r.labels for r in runs]))
    curve = accuracy_by_block_time(params, all_trs, [r.design for r in runs], spec)

    rows = [("accuracy", float(accuracy)), ("n_samples", len(samples))]
    for k, name in enumerate(states):
        row_total = int(confusion[k].sum())
        recall = confusion[k, k] / row_total if row_total else 0.0
        rows.append((f"recall_{name}", float(recall)))
    _write_csv(os.path.join(out, "evaluation.csv"), ["metric", "value"], rows)
    _write_csv(os.path.join(out, "confusion.csv"), ["true\\pred"] + list(states),
               [[states[k]] + [int(v) for v in confusion[k]] for k in range(len(states))])
    _write_csv(os.path.join(out, "block_time.csv"), ["offset", "accuracy"],
               [(int(k), float(a)) for k, a in enumerate(curve) if np.isfinite(a)])
    _write_json(os.path.join(out, "evaluate.json"), {
        "accuracy": float(accuracy),
        "n_samples": len(samples),
        "n_correct": int(np.trace(confusion)),
    })
    return 0


def cmd_attribute(args):
    import numpy as np
    from .lrp import decompose_batch, select_window

    cfg = _load_config(args)
    ds = _load_runs(args.data)
    params, spec, meta = _load_model(args.model)
    out = _out_dir(args)
    index = []
    skipped = []
    for subj in ds.test_subjects or ds.subjects:
        for r, run in enumerate(subj.runs):
            trs = select_window(np.arange(run.design.n_trs), run.design,
                                cfg.fit.window)
            for lo in range(0, len(trs), 16):
                chunk = trs[lo:lo + 16]
                vols = run.volumes[chunk].astype(np.float32)
                states = run.labels[chunk]
                results, missed = decompose_batch(params, vols, states,
                                                  cfg.lrp, spec,
                                                  sample_ids=[int(t) for t in chunk])
                for rv in results:
                    tr = rv.sample_id
                    name = f"rel_sub-{subj.subject_id:02d}_run-{r}_tr-{tr:03d}.vol"
                    _write_vol(os.path.join(out, name), rv.map.astype(np.float32),
                               ds.voxel_mm, ds.tr_s)
                    index.append({
                        "file": name, "subject": subj.subject_id, "run": r,
                        "tr": tr, "state": int(rv.state),
                        "offset": int(run.design.within_block_index[tr]),
                        "score": float(rv.score),
                        "nonpositive_score": bool(rv.nonpositive_score),
                    })
                skipped.extend({"subject": subj.subject_id, "run": r, "tr": int(t)}
                               for t in missed)
    grid_meta = ds.subjects[0].runs[0].meta
    _write_json(os.path.join(out, "attribute.json"), {
        "files": index, "skipped": skipped, "n_decomposed": len(index),
        "voxel_mm": ds.voxel_mm, "tr_s": ds.tr_s,
        "crop_box": grid_meta.get("crop_box"),
        "states": grid_meta["states"],
    })
    return 0


def cmd_glm(args):
    import numpy as np
    from scipy import stats
    from .baselines import (build_design, glm_contrast, glm_fit,
                            one_vs_rest_contrast, second_level)
    from .phantom import state_boxcars

    _load_config(args)   # validates the file even though glm has no knobs
    ds = _load_runs(args.data)
    out = _out_dir(args)
    n_states = len(ds.subjects[0].runs[0].meta["states"])
    grid = ds.grid
    subject_maps = {k: [] for k in range(n_states)}
    for subj in ds.subjects:
        boxes = [state_boxcars(run.design, n_states) for run in subj.runs]
        design = build_design(boxes, ds.tr_s)
        y = np.concatenate([run.volumes.reshape(run.volumes.shape[0], -1)
                            for run in subj.runs])
        fit = glm_fit(y, design)
        for state in range(n_states):
            z = glm_contrast(fit, one_vs_rest_contrast(design, state, n_states))
            z = z.reshape(grid)
            subject_maps[state].append(z)
            _write_vol(os.path.join(out, f"glm_sub-{subj.subject_id:02d}_state-{state}.vol"),
                       z.astype(np.float32), ds.voxel_mm, ds.tr_s)
    dof = len(ds.subjects) - 1
    for state in range(n_states):
        t = second_level(np.stack(subject_maps[state]))
        p = 2.0 * stats.t.sf(np.abs(t), dof)
        _write_vol(os.path.join(out, f"glm_group_state-{state}.vol"),
                   t.astype(np.float32), ds.voxel_mm, ds.tr_s)
        _write_vol(os.path.join(out, f"glm_group_p_state-{state}.vol"),
                   p.astype(np.float32), ds.voxel_mm, ds.tr_s)
    _write_json(os.path.join(out, "glm.json"), {
        "subjects": [s.subject_id for s in ds.subjects],
        "n_states": n_states, "dof": dof,
    })
    return 0


def cmd_searchlight(args):
    import numpy as np
    from .baselines import searchlight

    cfg = _load_config(args)
    ds = _load_runs(args.data)
    out = _out_dir(args)
    mask_path = os.path.join(args.data, "mask.vol")
    if os.path.exists(mask_path):
        from .volio import read_vol1
        full = read_vol1(mask_path).data[0] > 0.5
        meta0 = ds.subjects[0].runs[0].meta
        if "crop_box" in meta0:
            sl = tuple(slice(lo, hi + 1) for lo, hi in meta0["crop_box"])
            mask = full[sl]
        else:
            mask = full
    else:
        mask = np.ones(ds.grid, dtype=bool)
    if not ds.train_subjects or not ds.test_subjects:
        from .errors import InputError
        raise InputError("searchlight needs both train and test subjects")
    train = _window_set(ds.train_subjects, cfg.fit.window)
    test = _window_set(ds.test_subjects, cfg.fit.window)
    result = searchlight(train.volumes, train.labels, test.volumes, test.labels,
                         mask, cfg.svm.radius_mm, ds.voxel_mm,
                         c=cfg.svm.c, iters=cfg.svm.iters)
    acc = result.accuracy
    _write_vol(os.path.join(out, "searchlight.vol"), acc.astype(np.float32),
               ds.voxel_mm, ds.tr_s)
    peak = np.unravel_index(np.nanargmax(acc), acc.shape)
    _write_json(os.path.join(out, "searchlight.json"), {
        "radius_mm": result.radius_mm, "n_centers": result.n_centers,
        "peak_center": [int(v) for v in peak],
        "peak_accuracy": float(np.nanmax(acc)),
    })
    return 0


def cmd_lasso(args):
    import numpy as np
    from .baselines import lasso_fit, lasso_fit_sgd

    cfg = _load_config(args)
    ds = _load_runs(args.data)
    out = _out_dir(args)
    subjects = ds.train_subjects or ds.subjects
    per_subject = []
    for subj in subjects:
        s = _window_set([subj], cfg.fit.window)
        per_subject.append((s.volumes.reshape(len(s), -1).astype(np.float64),
                            s.labels))
    ls = cfg.lasso
    if ls.mode == "sgd":
        model = lasso_fit_sgd(per_subject, ls.lam, ls.epochs, ls.seed)
    else:
        x = np.concatenate([f for f, _ in per_subject])
        y = np.concatenate([l for _, l in per_subject])
        model = lasso_fit(x, y, ls.lam, iters=ls.max_iter,
                          fit_intercept=ls.fit_intercept)
    counts = []
    for state in range(model.coef.shape[1]):
        cmap = model.coef[:, state].reshape(ds.grid)
        counts.append(int(np.count_nonzero(np.abs(cmap) > 1e-10)))
        _write_vol(os.path.join(out, f"lasso_state-{state}.vol"),
                   cmap.astype(np.float32), ds.voxel_mm, ds.tr_s)
    _write_json(os.path.join(out, "lasso.json"), {
        "lambda": ls.lam, "mode": ls.mode,
        "nonzero_per_state": counts, "total_nonzero": sum(counts),
    })
    return 0


def _load_targets(target_dir, box=None):
    import numpy as np
    from .volio import read_vol1

    masks = {}
    for name in sorted(os.listdir(target_dir)):
        if name.startswith("target_state-") and name.endswith(".vol"):
            state = int(name[len("target_state-"):-len(".vol")])
            grid = read_vol1(os.path.join(target_dir, name)).data[0] > 0.5
            if box is not None:
                grid = grid[tuple(slice(lo, hi + 1) for lo, hi in box)]
            masks[state] = grid
    if not masks:
        from .errors import InputError
        raise InputError(f"{target_dir}: no target_state-*.vol masks found")
    return masks


def cmd_maps(args):
    import numpy as np
    from .brainmaps import (aggregate_group, aggregate_subject, f1_similarity,
                            threshold_fdr, threshold_percentile,
                            time_resolved_maps)
    from .volio import read_vol1

    cfg = _load_config(args)
    out = _out_dir(args)
    ms = cfg.maps
    if args.method == "deeplight":
        index = _read_json(os.path.join(args.data, "attribute.json"))
        targets = _load_targets(args.targets, index.get("crop_box"))
        voxel_mm = float(index["voxel_mm"])
        entries = {}
        for item in index["files"]:
            vol = read_vol1(os.path.join(args.data, item["file"])).data[0]
            key = (item["state"], item["subject"])
            entries.setdefault(key, []).append((vol, item["offset"]))
        f1_rows, time_rows = [], []
        for state in sorted(targets):
            subject_entries = []
            for (s, subj), pairs in sorted(entries.items()):
                if s != state:
                    continue
                vols = np.stack([v for v, _ in pairs])
                offsets = np.array([o for _, o in pairs])
                subject_entries.append((vols, offsets))
            if not subject_entries:
                f1_rows.append((state, 0, 0.0, 0.0, 0.0))
                continue
            subj_maps = [aggregate_subject(v, state, fwhm_mm=ms.fwhm_mm,
                                           voxel_mm=voxel_mm)
                         for v, _ in subject_entries]
            group = aggregate_group(subj_maps)
            _write_vol(os.path.join(out, f"group_state-{state}.vol"),
                       group.values.astype(np.float32), voxel_mm,
                       float(index["tr_s"]))
            survivors = threshold_percentile(group, ms.q)
            rep = f1_similarity(survivors, targets[state])
            f1_rows.append((state, len(subject_entries), float(rep.precision),
                            float(rep.recall), float(rep.f1)))
            curve = time_resolved_maps(subject_entries, targets[state], state,
                                       q=ms.q, fwhm_mm=ms.fwhm_mm,
                                       voxel_mm=voxel_mm)
            for k in curve.offsets:
                time_rows.append((state, int(k),
                                  "" if np.isnan(curve.f1[k]) else float(curve.f1[k])))
        _write_csv(os.path.join(out, "f1.csv"),
                   ["state", "n_subjects", "precision", "recall", "f1"], f1_rows)
        _write_csv(os.path.join(out, "time_f1.csv"), ["state", "offset", "f1"],
                   time_rows)
        _write_json(os.path.join(out, "maps.json"), {
            "method": "deeplight", "rule": f"percentile,q={ms.q:g}",
            "f1": {str(r[0]): r[4] for r in f1_rows},
        })
    else:
        targets = _load_targets(args.targets)
        f1_rows = []
        for state in sorted(targets):
            t_map = read_vol1(os.path.join(args.data, f"glm_group_state-{state}.vol")).data[0]
            if ms.rule == "fdr":
                p_map = read_vol1(os.path.join(args.data,
                                               f"glm_group_p_state-{state}.vol")).data[0]
                survivors = threshold_fdr(np.where(t_map > 0, p_map, 1.0), ms.fdr_rate)
            else:
                survivors = threshold_percentile(t_map.astype(np.float64), ms.q)
            rep = f1_similarity(survivors, targets[state])
            f1_rows.append((state, 0, float(rep.precision), float(rep.recall),
                            float(rep.f1)))
        _write_csv(os.path.join(out, "f1.csv"),
                   ["state", "n_subjects", "precision", "recall", "f1"], f1_rows)
        _write_json(os.path.join(out, "maps.json"), {
            "method": args.method,
            "rule": (f"fdr,rate={ms.fdr_rate:g}" if ms.rule == "fdr"
                     else f"percentile,q={ms.q:g}"),
            "f1": {str(r[0]): r[4] for r in f1_rows},
        })
    return 0


def cmd_report(args):
    from .report import build_report

    out = _out_dir(args)
    build_report(args.data, out)
    return 0


# ---------------------------------------------------------------------------
# argument surface
# ---------------------------------------------------------------------------

def _build_parser():
    p = argparse.ArgumentParser(prog="deeplight",
                                description="volumetric decoding pipeline")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread cap (DEEPLIGHT_THREADS overrides)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, model=False, seed=False):
        sp.add_argument("--config", default=None, help="INI config path")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", required=True, help="input directory")
        if model:
            sp.add_argument("--model", required=True, help="model checkpoint (.dlp)")
        if seed:
            sp.add_argument("--seed", type=int, default=None,
                            help="master seed; splits per component")

    sp = sub.add_parser("phantom", help="generate the synthetic dataset")
    common(sp, data=False, seed=True)
    sp = sub.add_parser("preprocess", help="mask, smooth, detrend, highpass")
    common(sp)
    sp = sub.add_parser("train", help="fit the decoder")
    common(sp, seed=True)
    sp = sub.add_parser("evaluate", help="accuracy, confusion, block-time curve")
    common(sp, model=True)
    sp = sub.add_parser("attribute", help="relevance volumes for test samples")
    common(sp, model=True)
    sp = sub.add_parser("glm", help="first/second-level contrast maps")
    common(sp)
    sp = sub.add_parser("searchlight", help="sphere-decoding accuracy map")
    common(sp)
    sp = sub.add_parser("lasso", help="sparse linear decoder maps")
    common(sp, seed=True)
    sp = sub.add_parser("maps", help="aggregate, threshold, score vs targets")
    common(sp)
    sp.add_argument("--targets", required=True, help="directory with target_state-*.vol")
    sp.add_argument("--method", choices=("deeplight", "glm"), default="deeplight")
    sp = sub.add_parser("report", help="collate CSVs and render figures")
    sp.add_argument("--data", required=True, nargs="+", help="result directories")
    sp.add_argument("--out", required=True)
    return p


_COMMANDS = {
    "phantom": cmd_phantom,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "attribute": cmd_attribute,
    "glm": cmd_glm,
    "searchlight": cmd_searchlight,
    "lasso": cmd_lasso,
    "maps": cmd_maps,
    "report": cmd_report,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    _apply_threads(argv)
    args = _build_parser().parse_args(argv)
    from .errors import ConfigurationError, DeepLightError

    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"deeplight: configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        path = exc.filename if exc.filename else exc
        print(f"deeplight: missing file: {path}", file=sys.stderr)
        return 1
    except DeepLightError as exc:
        print(f"deeplight: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
