"""Command-line interface: generation, the three pipeline stages, noise
estimation, EM refinement, evaluation, and edge export."""

import csv
import sys
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from . import evaluate, fileio, noise, report
from .errors import AnchorfaError, ValidationError
from .model import exact_marginal, random_model, sample_dataset
from .pipeline import (PipelineConfig, run_pipeline, stage_loadings,
                       stage_moments, stage_structure)
from .structure import edge_list_with_signs

# fixed substream labels so every stage draws from an independent,
# reproducible stream of the root seed
_STAGE_STREAMS = {"generate": 0, "moments": 1, "structure": 2, "loadings": 3,
                  "noise": 4, "em": 5, "eval": 6}


def stage_seed(root_seed, stage):
    ss = np.random.SeedSequence(root_seed, spawn_key=(_STAGE_STREAMS[stage],))
    return int(ss.generate_state(1)[0])


@click.group()
@click.option("--threads", default=1, show_default=True,
              help="Worker threads for parallelizable loops.")
@click.pass_context
def cli(ctx, threads):
    """Anchored discrete factor analysis: learn binary latent-variable models
    with noisy-or observations from data plus expert anchors."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = max(1, threads)


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(130)
    except AnchorfaError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(e.exit_code)


def _load_anchor_map(path):
    spec = fileio.parse_anchors(path)
    if not spec.is_complete():
        missing = [spec.names[i] for i, c in enumerate(spec.conditionals)
                   if c is None]
        raise ValidationError(
            f"anchors missing conditionals ({', '.join(missing)}); run "
            "noise-est first")
    return spec, spec.to_anchor_map()


def _dataset(data_path, n_observed, labels_path=None, m_latent=None):
    if n_observed is None:
        n_observed = fileio.sniff_columns(data_path)
    return fileio.parse_dataset(data_path, n_observed,
                                latent_path=labels_path, m_latent=m_latent)


def _config(order, constraint, lam_structure, lam_loadings, gap_tol, mode,
            max_indegree, seed):
    return PipelineConfig(order=order, constraint=constraint,
                          lam_structure=lam_structure,
                          lam_loadings=lam_loadings, gap_tol=gap_tol,
                          structure_mode=mode, max_indegree=max_indegree,
                          seed=seed)


_pipe_opts = [
    click.option("--order", default=2, show_default=True),
    click.option("--constraint", default="marginal", show_default=True,
                 type=click.Choice(["simplex", "local", "marginal"])),
    click.option("--lam-structure", default=0.01, show_default=True),
    click.option("--lam-loadings", default=0.1, show_default=True),
    click.option("--gap-tol", default=0.005, show_default=True),
    click.option("--mode", default="tree", show_default=True,
                 type=click.Choice(["independent", "tree", "exact"])),
    click.option("--max-indegree", default=2, show_default=True),
    click.option("--seed", default=0, show_default=True),
]


def pipe_opts(fn):
    for opt in reversed(_pipe_opts):
        fn = opt(fn)
    return fn


@cli.command()
@click.option("--m", required=True, type=int, help="Number of latents.")
@click.option("--n", required=True, type=int, help="Number of observed.")
@click.option("--structure", default="tree", show_default=True,
              help="independent, tree, or indegree-K.")
@click.option("--rows", default=10000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--outdir", required=True, type=click.Path())
def generate(m, n, structure, rows, seed, outdir):
    """Sample a synthetic model and dataset into OUTDIR."""
    import os

    os.makedirs(outdir, exist_ok=True)
    model = random_model(m, n, structure, stage_seed(seed, "generate"))
    data = sample_dataset(model, rows, stage_seed(seed, "generate") + 1)
    fp = fileio.config_fingerprint({"cmd": "generate", "m": m, "n": n,
                                    "structure": structure, "rows": rows,
                                    "seed": seed})
    fileio.save_model(f"{outdir}/true_model.json", model, fingerprint=fp)
    fileio.write_sparse_rows(f"{outdir}/data.txt", data.observed_rows)
    fileio.write_sparse_rows(f"{outdir}/labels.txt", data.latent_rows)
    with open(f"{outdir}/anchors.txt", "w") as fh:
        for i in range(m):
            c = model.anchors.conditionals[i]
            fh.write(f"{model.space.latent_names[i]} "
                     f"{model.anchors.anchor_of[i]} "
                     f"{float(c[1, 1])!r} {float(c[1, 0])!r}\n")
    click.echo(f"wrote model, data ({rows} rows), labels, anchors to {outdir}")


@cli.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--anchors", "anchors_path", required=True,
              type=click.Path(exists=True))
@click.option("--n-observed", default=None, type=int)
@click.option("--out", required=True, type=click.Path())
@pipe_opts
def moments(data_path, anchors_path, n_observed, out, **opts):
    """Recover the latent moment set from anchor moments."""
    _, anchor_map = _load_anchor_map(anchors_path)
    data = _dataset(data_path, n_observed)
    cfg = _config(opts["order"], opts["constraint"], opts["lam_structure"],
                  opts["lam_loadings"], opts["gap_tol"], opts["mode"],
                  opts["max_indegree"], stage_seed(opts["seed"], "moments"))
    ms = stage_moments(data, anchor_map, cfg)
    fp = fileio.config_fingerprint({"cmd": "moments", **opts})
    fileio.save_moment_set(out, ms, fingerprint=fp)
    click.echo(f"recovered moments of order {ms.order} for "
               f"{len(ms.latent_ids)} latents -> {out}")


@cli.command()
@click.option("--moments", "moments_path", required=True,
              type=click.Path(exists=True))
@click.option("--rows", required=True, type=int,
              help="Sample count behind the moments (BIC penalty).")
@click.option("--mode", default="tree", show_default=True,
              type=click.Choice(["independent", "tree", "exact"]))
@click.option("--max-indegree", default=2, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--plot", default=None, type=click.Path())
def structure(moments_path, rows, mode, max_indegree, out, plot):
    """Learn the latent graph from a recovered moment set."""
    ms = fileio.load_moment_set(moments_path)
    cfg = PipelineConfig(order=ms.order, structure_mode=mode,
                         max_indegree=min(max_indegree, ms.order - 1)
                         if mode == "exact" else max_indegree)
    scored, _ = stage_structure(ms, rows, cfg)
    fp = fileio.config_fingerprint({"cmd": "structure", "rows": rows,
                                    "mode": mode,
                                    "max_indegree": max_indegree})
    fileio.save_structure(out, scored, fingerprint=fp)
    if plot:
        signed = edge_list_with_signs(scored, ms)
        report.plot_structure(signed, len(ms.latent_ids), plot)
    click.echo(f"structure score {scored.score:.4f}, "
               f"{len(scored.edges())} edges -> {out}")


@cli.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--anchors", "anchors_path", required=True,
              type=click.Path(exists=True))
@click.option("--moments", "moments_path", required=True,
              type=click.Path(exists=True))
@click.option("--structure", "structure_path", required=True,
              type=click.Path(exists=True))
@click.option("--n-observed", default=None, type=int)
@click.option("--out", required=True, type=click.Path())
@pipe_opts
def loadings(data_path, anchors_path, moments_path, structure_path,
             n_observed, out, **opts):
    """Estimate noisy-or failures and leaks given moments and structure."""
    from .model import AdfaModel, VariableSpace
    from .structure import fit_cpts

    spec, anchor_map = _load_anchor_map(anchors_path)
    data = _dataset(data_path, n_observed)
    ms = fileio.load_moment_set(moments_path)
    scored = fileio.load_structure(structure_path)
    latent = fit_cpts(ms, scored)
    cfg = _config(opts["order"], opts["constraint"], opts["lam_structure"],
                  opts["lam_loadings"], opts["gap_tol"], opts["mode"],
                  opts["max_indegree"], stage_seed(opts["seed"], "loadings"))
    n_obs = data.observed_rows.shape[1]
    lds = stage_loadings(data, anchor_map, latent, ms, cfg, n_obs)
    space = VariableSpace(n_observed=n_obs, m_latent=anchor_map.m,
                          latent_names=spec.names)
    model = AdfaModel(space=space, latent=latent, loadings=lds,
                      anchors=anchor_map)
    fp = fileio.config_fingerprint({"cmd": "loadings", **opts})
    fileio.save_model(out, model, fingerprint=fp)
    click.echo(f"estimated loadings for {n_obs} observed columns -> {out}")


@cli.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--anchors", "anchors_path", required=True,
              type=click.Path(exists=True))
@click.option("--n-observed", default=None, type=int)
@click.option("--outdir", required=True, type=click.Path())
@pipe_opts
def learn(data_path, anchors_path, n_observed, outdir, **opts):
    """Run the full pipeline: moments -> structure -> loadings."""
    import os

    os.makedirs(outdir, exist_ok=True)
    spec, anchor_map = _load_anchor_map(anchors_path)
    data = _dataset(data_path, n_observed)
    cfg = _config(opts["order"], opts["constraint"], opts["lam_structure"],
                  opts["lam_loadings"], opts["gap_tol"], opts["mode"],
                  opts["max_indegree"], opts["seed"])
    model, artifacts = run_pipeline(data, anchor_map, cfg,
                                    latent_names=spec.names)
    fp = fileio.config_fingerprint({"cmd": "learn", **opts})
    fileio.save_moment_set(f"{outdir}/moments.json", artifacts["moments"],
                           fingerprint=fp)
    fileio.save_structure(f"{outdir}/structure.json", artifacts["structure"],
                          fingerprint=fp)
    fileio.save_model(f"{outdir}/model.json", model, fingerprint=fp)
    signed = edge_list_with_signs(artifacts["structure"], artifacts["moments"])
    report.plot_structure(signed, model.m, f"{outdir}/structure.png",
                          latent_names=spec.names)
    click.echo(f"learned model with {len(signed)} latent edges -> {outdir}")


@cli.command("noise-est")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--anchors", "anchors_path", required=True,
              type=click.Path(exists=True))
@click.option("--method", default="triplet", show_default=True,
              type=click.Choice(["triplet", "singly-labeled"]))
@click.option("--second-anchors", default="",
              help="latent:column pairs, e.g. '0:5,1:7' (triplet method).")
@click.option("--labels", "labels_path", default=None,
              type=click.Path(exists=True), help="singly-labeled method.")
@click.option("--n-observed", default=None, type=int)
@click.option("--out", required=True, type=click.Path(),
              help="Completed anchors file.")
@click.pass_context
def noise_est(ctx, data_path, anchors_path, method, second_anchors,
              labels_path, n_observed, out):
    """Fill in missing anchor conditionals from data."""
    from .errors import ValidationError

    spec = fileio.parse_anchors(anchors_path)
    data = _dataset(data_path, n_observed, labels_path=labels_path,
                    m_latent=spec.m if labels_path else None)
    missing = [i for i, c in enumerate(spec.conditionals) if c is None]
    if not missing:
        click.echo("all anchors already carry conditionals")
    second = {}
    for pair in filter(None, second_anchors.split(",")):
        k, v = pair.split(":")
        second[int(k)] = int(v)

    def estimate(i):
        if method == "singly-labeled":
            if data.latent_rows is None:
                raise ValidationError("singly-labeled estimation needs --labels")
            est = noise.singly_labeled_estimate(data, i, spec.anchor_of[i])
            return est.conditional
        if i not in second:
            raise ValidationError(
                f"triplet estimation needs a second anchor for latent {i} "
                "(--second-anchors)")
        w1, w2 = spec.anchor_of[i], second[i]
        x = noise.pick_third_view(data, w1, w2)
        tensor = noise.empirical_triplet(data, w1, w2, x)
        _, cond_w1, _, _ = noise.triplet_decompose(tensor)
        return cond_w1

    with ThreadPoolExecutor(max_workers=ctx.obj["threads"]) as pool:
        estimated = dict(zip(missing, pool.map(estimate, missing)))

    conds = [estimated.get(i, c) for i, c in enumerate(spec.conditionals)]
    with open(out, "w") as fh:
        for i in range(spec.m):
            c = conds[i]
            fh.write(f"{spec.names[i]} {spec.anchor_of[i]} "
                     f"{float(c[1, 1])!r} {float(c[1, 0])!r}\n")
    click.echo(f"estimated conditionals for latents {missing} -> {out}")


@cli.command("em-refine")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--steps", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--trace-csv", default=None, type=click.Path())
@click.option("--trace-png", default=None, type=click.Path())
def em_refine_cmd(data_path, model_path, steps, seed, out, trace_csv,
                  trace_png):
    """Refine failure/leak parameters by Monte-Carlo EM."""
    model = fileio.load_model(model_path)
    data = _dataset(data_path, model.n)
    refined, trace = evaluate.em_refine(model, data, steps,
                                        stage_seed(seed, "em"))
    fp = fileio.config_fingerprint({"cmd": "em-refine", "steps": steps,
                                    "seed": seed})
    fileio.save_model(out, refined, fingerprint=fp)
    if trace_csv:
        with open(trace_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loglik_before", "loglik_after"])
            for t in trace:
                w.writerow([t["step"], t["loglik_before"], t["loglik_after"]])
    if trace_png:
        report.plot_em_trace(trace, trace_png)
    click.echo(f"refined model after {steps} outer steps -> {out}")


@cli.command("eval-lasttag")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True,
              type=click.Path(exists=True))
@click.option("--model", "model_paths", required=True, multiple=True,
              help="name=path; repeatable for comparisons.")
@click.option("--seed", default=0, show_default=True)
@click.option("--max-rows", default=None, type=int)
@click.option("--out", required=True, type=click.Path(), help="CSV output.")
def eval_lasttag(data_path, labels_path, model_paths, seed, max_rows, out):
    """Top-1 last-tag prediction accuracy per model."""
    rows = []
    for entry in model_paths:
        name, _, path = entry.partition("=")
        model = fileio.load_model(path)
        data = _dataset(data_path, model.n, labels_path=labels_path,
                        m_latent=model.m)
        acc, trials = evaluate.last_tag_accuracy(
            model, data, seed=stage_seed(seed, "eval"), max_rows=max_rows)
        rows.append((name, acc, trials))
        click.echo(f"{name}: top-1 accuracy {acc:.4f} over {trials} rows")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "top1_accuracy", "rows"])
        w.writerows(rows)


@cli.command("eval-heldout")
@click.option("--labels", "labels_path", required=True,
              type=click.Path(exists=True))
@click.option("--model", "model_paths", required=True, multiple=True,
              help="name=path; repeatable for comparisons.")
@click.option("--out", required=True, type=click.Path(), help="CSV output.")
@click.option("--plot", default=None, type=click.Path())
def eval_heldout(labels_path, model_paths, out, plot):
    """Held-out latent log-likelihood per row, per model."""
    rows = []
    results = {}
    for entry in model_paths:
        name, _, path = entry.partition("=")
        model = fileio.load_model(path)
        labels = fileio.parse_dataset(labels_path, model.m)
        ll = evaluate.heldout_latent_loglik(model.latent,
                                            labels.observed_rows)
        rows.append((name, ll))
        results[name] = [ll]
        click.echo(f"{name}: held-out log-likelihood/row {ll:.4f}")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "loglik_per_row"])
        w.writerows(rows)
    if plot:
        report.plot_constraint_comparison(results, plot)


@cli.command("export-edges")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="CSV output.")
@click.option("--plot", default=None, type=click.Path())
def export_edges(model_path, out, plot):
    """Export the latent edges with correlation signs, plus top loadings."""
    from .loadings import ranked_loadings
    from .tables import MomentSet

    from .structure import ScoredStructure

    model = fileio.load_model(model_path)
    ms = MomentSet(order=2, latent_ids=tuple(range(model.m)))
    for i in range(model.m):
        ms.set(exact_marginal(model, (i,)))
    scored = ScoredStructure(parents=model.latent.parents, score=0.0,
                             family_scores=(0.0,) * model.m)
    for p, i in scored.edges():
        if not ms.has((p, i)):
            ms.set(exact_marginal(model, tuple(sorted((p, i)))))
    signed = edge_list_with_signs(scored, ms)
    ranked = ranked_loadings(model.loadings.failures,
                             model.loadings.edge_mask,
                             latent_names=model.space.latent_names)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "source", "target", "sign_or_weight"])
        for p, i, sign in signed:
            w.writerow(["latent-edge", model.space.latent_names[p],
                        model.space.latent_names[i], sign])
        for j, rows in enumerate(ranked):
            for name, f, weight in rows:
                w.writerow(["loading", name, model.space.observed_names[j],
                            f"{weight:.6f}"])
    if plot:
        report.plot_structure(signed, model.m, plot,
                              latent_names=model.space.latent_names)
    click.echo(f"exported {len(signed)} edges and loadings -> {out}")


if __name__ == "__main__":
    main()
