"""Command-line pipeline: ``ingest``, ``fit``, ``cv`` and ``report``.

Every subcommand reads and writes plain files in ``--out-dir``; outputs are
written atomically and depend only on the inputs, the configuration and
the seed, so reruns are byte-identical.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
import zlib
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import stats
from scipy.special import logit

from .data import TargetLevel, align_profiles
from .em import CvConfig, EmConfig, cross_validate, em_run, reference_column
from .exceptions import (ConvergenceWarning, DataError, InitializationError, NumericalError,
                         RefJournalsError, SupportTooLargeError, UnusableTitleError)
from .ingest import (CachedResolver, CrossrefResolver, aggregate, build_profiles,
                     cluster_journals, enrich_with_doi_metadata, named_clusters,
                     read_counts_csv, read_profiles_csv, read_results, read_submissions,
                     write_counts_csv, write_profiles_csv)
from .ingest.aggregate import column_names
from .ingest.records import atomic_write_text, csv_text, format_float, write_csv
from .ingest.titles import normalize_title
from .metrics import (FundingConfig, dissimilarity, funding_units, metric_correlation,
                      money_redistribution, predict, probit_gap)
from .model import _thin_to, derive_three_star, posterior_for
from .sampler import ChainConfig, run_chains, summarize

log = logging.getLogger("refjournals")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
TARGETS = {"4": (TargetLevel.FOUR_STAR,), "34": (TargetLevel.THREE_PLUS,),
           "both": (TargetLevel.FOUR_STAR, TargetLevel.THREE_PLUS)}


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# configuration

@dataclass
class ResolverConfig:
    url: str = None
    cache: str = None
    timeout: float = 10.0
    retries: int = 3
    max_workers: int = 8


@dataclass
class RunConfig:
    submissions: str = None
    results: str = None
    metrics_csv: str = None
    metrics_log: bool = False
    uoa: str = None
    threshold: int = 20
    target: str = "both"
    method: str = "both"
    seed: int = 0
    out_dir: str = "."
    chain: ChainConfig = field(default_factory=ChainConfig)
    em: EmConfig = field(default_factory=EmConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    funding: FundingConfig = field(default_factory=FundingConfig)
    resolver: ResolverConfig = field(default_factory=ResolverConfig)

    def validate(self):
        if self.method not in ("hmc", "em", "both"):
            raise UsageError(f"--method must be hmc, em or both, not {self.method!r}")
        if self.target not in TARGETS:
            raise UsageError(f"--target must be 4, 34 or both, not {self.target!r}")
        if int(self.threshold) < 1:
            raise UsageError("--threshold must be at least 1")
        if not 0 <= int(self.seed) < 2**63:
            raise UsageError("--seed must be a non-negative 64-bit integer")


_SECTIONS = {"chain": ChainConfig, "em": EmConfig, "cv": CvConfig, "funding": FundingConfig,
             "resolver": ResolverConfig}


def load_config(path):
    """Read a JSON config file into a :class:`RunConfig`."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be an object")
    base = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    for key, value in raw.items():
        if key not in known:
            raise UsageError(f"{path}: unknown config key {key!r}")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(value, dict):
                raise UsageError(f"{path}: {key!r} must be an object")
            allowed = {f.name for f in fields(cls)}
            bad = sorted(set(value) - allowed)
            if bad:
                raise UsageError(f"{path}: unknown keys in {key!r}: {bad}")
            try:
                updates[key] = replace(getattr(base, key), **value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{path}: {key}: {exc}") from None
        else:
            updates[key] = value
    if "target" in updates:
        updates["target"] = str(updates["target"])
    return replace(base, **updates)


def named_seed(seed, name):
    """Independent 64-bit seed for the substream ``name`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, np.uint64)[0])


# ----------------------------------------------------------------------------
# small file helpers

def _path(cfg, name):
    return os.path.join(cfg.out_dir, name)


def _require(path, what):
    if not os.path.exists(path):
        raise UsageError(f"missing {what}: {path}")
    return path


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------------
# ingest

def cmd_ingest(cfg):
    if not cfg.submissions:
        raise UsageError("ingest needs --submissions")
    if not cfg.results:
        raise UsageError("ingest needs --results")
    _require(cfg.submissions, "submissions file")
    _require(cfg.results, "results file")
    outputs = read_submissions(cfg.submissions, cfg.uoa)
    if not outputs:
        raise DataError(f"{cfg.submissions}: no submitted outputs")
    results = read_results(cfg.results, cfg.uoa)
    report = None
    rc = cfg.resolver
    if rc.url or rc.cache:
        inner = CrossrefResolver(rc.url, rc.timeout, rc.retries) if rc.url else None
        resolver = CachedResolver(rc.cache, inner)
        outputs, report = enrich_with_doi_metadata(outputs, resolver, rc.max_workers)
    clusters = cluster_journals(outputs)
    counts = aggregate(clusters, outputs, cfg.threshold)
    profiles = build_profiles(results, counts)
    named = named_clusters(clusters, cfg.threshold)
    col_of = dict(zip((c.journal_id for c in named), column_names(named)))
    write_counts_csv(_path(cfg, "counts.csv"), counts)
    write_profiles_csv(_path(cfg, "profiles.csv"), profiles)
    write_csv(_path(cfg, "clusters.csv"),
              ["journal_id", "display_title", "article_count", "identifier_keys", "column"],
              [[c.journal_id, c.display_title, c.article_count, ";".join(sorted(c.identifier_keys)),
                col_of.get(c.journal_id, "")] for c in clusters])
    summary = {"outputs": len(outputs), "journal_articles": sum(o.is_article for o in outputs),
               "journals": len(clusters), "named_journals": len(named), "threshold": cfg.threshold,
               "institutions": len(counts.institutions),
               "named_share": float(counts.counts[:, : len(named)].sum() / max(1, counts.counts.sum()))}
    if report is not None:
        write_csv(_path(cfg, "enrichment.csv"), ["output_id", "status"],
                  sorted([(i, "changed") for i in report.changed]
                         + [(i, "resolved") for i in set(report.resolved) - set(report.changed)]
                         + [(i, "unresolved") for i in report.unresolved]
                         + [(i, "failed") for i in report.failed]))
        summary.update(resolved=len(report.resolved), changed=len(report.changed),
                       unresolved=len(report.unresolved), failed=len(report.failed))
    _write_json(_path(cfg, "ingest.json"), summary)
    print(f"{summary['journal_articles']} journal articles in {len(clusters)} journals; "
          f"{len(named)} named at threshold {cfg.threshold}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# fit

def _load_fit_inputs(cfg):
    counts = read_counts_csv(_require(_path(cfg, "counts.csv"), "counts matrix (run ingest first)"))
    profiles = read_profiles_csv(_require(_path(cfg, "profiles.csv"), "profiles (run ingest first)"))
    arrays = align_profiles(profiles, counts)
    return counts, profiles, arrays


def _write_draws(path, draws):
    C, S, P = draws.draws.shape
    rows = []
    for c in range(C):
        for s in range(S):
            for p in range(P):
                rows.append((c, s, draws.names[p], float(draws.draws[c, s, p])))
    write_csv(path, ["chain", "iteration", "parameter", "value"], rows)


def _write_sampler_trace(path, draws):
    C, S = draws.accept_stat.shape
    write_csv(path, ["chain", "iteration", "log_density", "accept_stat", "n_leapfrog",
                     "tree_depth", "divergent"],
              [(c, s, float(draws.log_density[c, s]), float(draws.accept_stat[c, s]),
                int(draws.n_leapfrog[c, s]), int(draws.tree_depth[c, s]), int(draws.divergent[c, s]))
               for c in range(C) for s in range(S)])


LEAGUE_HEADER = ["journal", "target", "median", "lo50", "hi50", "lo95", "hi95", "article_count"]


def _fit_hmc(cfg, counts, profiles, target, summary):
    post = posterior_for(counts, profiles, target)
    chain = replace(cfg.chain, seed=named_seed(cfg.seed, f"sampler/{target.value}"))
    draws = run_chains(post.log_density_and_grad, post.init_point, chain,
                       names=post.constrained_names, transform=post.constrain)
    tag = target.value
    _write_draws(_path(cfg, f"draws_{tag}.csv"), draws)
    _write_sampler_trace(_path(cfg, f"trace_{tag}.csv"), draws)
    enough = chain.chains >= 2 and chain.sample_iters >= 100
    s = summarize(draws, diagnostics=enough)
    names = draws.names
    rhat_rows = [(n, s[n].rhat, s[n].ess_bulk) for n in names]
    write_csv(_path(cfg, f"rhat_{tag}.csv"), ["parameter", "rhat", "ess_bulk"], rhat_rows)
    rhats = [r for _, r, _ in rhat_rows if math.isfinite(r)]
    summary[f"hmc_{tag}"] = {
        "divergent": draws.n_divergent, "divergence_rate": draws.divergence_rate,
        "unreliable": draws.unreliable, "max_rhat": max(rhats) if rhats else None,
        "min_ess_bulk": min((e for _, _, e in rhat_rows if math.isfinite(e)), default=None),
        "step_size": draws.step_size.tolist(), "seed": chain.seed,
        "alpha_median": s["alpha"].median, "mu_median": s["mu"].median,
        "gamma_median": s["gamma"].median,
        "deconvolution_fallbacks": post.fallbacks,
    }
    if draws.unreliable:
        log.warning("%s fit: %.1f%% divergent transitions; results unreliable",
                    target.label, 100 * draws.divergence_rate)
    J = len(counts.columns)
    return draws.flat()[:, :J], [s[f"pi[{j}]"] for j in range(J)]


def _fit_em(cfg, counts, arrays, target, summary):
    em_cfg = replace(cfg.em, init_seed=named_seed(cfg.seed, f"em/{target.value}"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        res = em_run(counts, arrays.successes(target), em_cfg)
    summary[f"em_{target.value}"] = {
        "iterations": res.n_iter, "converged": res.converged, "oscillating": res.oscillating,
        "mu_hat": res.fit.mu_hat, "alpha_hat": res.fit.alpha_hat,
        "pseudo_strength": em_cfg.pseudo_strength, "seed": em_cfg.init_seed,
        "warnings": [str(w.message) for w in caught],
    }
    return res


def cmd_fit(cfg):
    counts, profiles, arrays = _load_fit_inputs(cfg)
    targets = TARGETS[cfg.target]
    J = len(counts.columns)
    article_count = counts.column_totals
    summary = {"method": cfg.method, "target": cfg.target, "seed": cfg.seed}
    hmc, em = {}, {}
    league = []
    em_rows = []
    failure = None
    try:
        for target in targets:
            if cfg.method in ("hmc", "both"):
                pi_draws, summ = _fit_hmc(cfg, counts, profiles, target, summary)
                hmc[target] = (pi_draws, summ)
                for j, col in enumerate(counts.columns):
                    p = summ[j]
                    league.append([col, target.label, p.median, p.lo50, p.hi50, p.lo95, p.hi95,
                                   int(article_count[j])])
            if cfg.method in ("em", "both"):
                res = _fit_em(cfg, counts, arrays, target, summary)
                em[target] = res
                for j, col in enumerate(counts.columns):
                    em_rows.append([col, target.label, float(res.fit.beta_hat[j]),
                                    float(res.fit.log_odds[j]), float(res.pi[j])])
    except (InitializationError, NumericalError, FloatingPointError) as exc:
        failure = exc
    if league:
        write_csv(_path(cfg, "league_table.csv"), LEAGUE_HEADER, league)
    if em_rows:
        write_csv(_path(cfg, "em_fit.csv"), ["journal", "target", "beta_hat", "log_odds", "pi_hat"],
                  em_rows)
    if failure is not None:
        summary["failure"] = str(failure)
        _write_json(_path(cfg, "fit.json"), summary)
        raise failure

    both = len(targets) == 2
    if hmc and both:
        d4, d34 = hmc[TargetLevel.FOUR_STAR][0], hmc[TargetLevel.THREE_PLUS][0]
        three = derive_three_star(d4, d34)
        write_csv(_path(cfg, "three_star.csv"),
                  ["journal", "median", "lo50", "hi50", "lo95", "hi95", "negative_fraction", "flagged"],
                  [[col, three.median[j], three.lo50[j], three.hi50[j], three.lo95[j], three.hi95[j],
                    float(three.negative_fraction[j]), int(three.flagged[j])]
                   for j, col in enumerate(counts.columns)])
        summary["three_star_flagged"] = [c for c, f in zip(counts.columns, three.flagged) if f]
    if hmc and em:
        rows, corr = [], {}
        for target in targets:
            h = np.array([p.median for p in hmc[target][1]])
            e = em[target].log_odds
            for j, col in enumerate(counts.columns):
                rows.append([col, target.label, float(e[j]), float(logit(h[j]))])
            corr[target.label] = float(stats.pearsonr(e, logit(h))[0]) if J > 2 else None
        write_csv(_path(cfg, "em_vs_hmc.csv"), ["journal", "target", "em_logit", "hmc_median_logit"],
                  rows)
        summary["em_vs_hmc_pearson"] = corr

    if both:
        if hmc:
            point = {t: np.array([p.median for p in hmc[t][1]]) for t in targets}
        else:
            point = {t: em[t].pi for t in targets}
        pi4, pi34 = point[TargetLevel.FOUR_STAR], point[TargetLevel.THREE_PLUS]
        pred = predict(counts, pi4, pi34)
        totals = arrays.totals.astype(float)
        fund = cfg.funding
        actual = funding_units(arrays.y4 / totals, arrays.y3 / totals, arrays.fte, fund)
        predicted = funding_units(pred.yhat4 / totals, pred.yhat3 / totals, arrays.fte, fund)
        write_csv(_path(cfg, "predictions.csv"),
                  ["institution", "fte", "y4", "yhat4", "y3", "yhat3", "funding_actual_units",
                   "funding_predicted_units"],
                  [[inst, float(arrays.fte[i]), int(arrays.y4[i]), float(pred.yhat4[i]),
                    int(arrays.y3[i]), float(pred.yhat3[i]), float(actual[i]), float(predicted[i])]
                   for i, inst in enumerate(counts.institutions)])
        has_fte = bool(np.all(arrays.fte > 0))
        if hmc:
            d4, d34 = hmc[TargetLevel.FOUR_STAR][0], hmc[TargetLevel.THREE_PLUS][0]
            size = min(len(d4), len(d34))
            d4, d34 = _thin_to(d4, size), _thin_to(d34, size)
        else:
            d4, d34 = pi4[None, :], pi34[None, :]
        rows = []
        for s in range(d4.shape[0]):
            p = predict(counts, d4[s], d34[s])
            dm = money_redistribution(arrays, p, fund) if has_fte else float("nan")
            rows.append([s, dissimilarity(arrays, p), dm])
        write_csv(_path(cfg, "indices.csv"), ["draw", "delta", "delta_money"], rows)
        deltas = np.array([r[1] for r in rows])
        moneys = np.array([r[2] for r in rows])
        summary["indices"] = {"median_delta": float(np.median(deltas)),
                              "median_delta_money": float(np.median(moneys)) if has_fte else None,
                              "point_delta": dissimilarity(arrays, pred),
                              "point_delta_money": money_redistribution(arrays, pred, fund)
                              if has_fte else None,
                              "source": "hmc" if hmc else "em"}
        if em and hmc:
            pe = predict(counts, em[TargetLevel.FOUR_STAR].pi, em[TargetLevel.THREE_PLUS].pi)
            summary["indices"]["em_delta"] = dissimilarity(arrays, pe)
            summary["indices"]["em_delta_money"] = (money_redistribution(arrays, pe, fund)
                                                    if has_fte else None)
        gap = probit_gap(pi4, pi34, counts.columns)
        inc = set(gap.included.tolist())
        write_csv(_path(cfg, "probit_gap.csv"), ["journal", "pi4", "pi34", "probit4", "c", "flagged"],
                  [[counts.columns[j], float(pi4[j]), float(pi34[j]), float(x), float(c),
                    int(counts.columns[j] in gap.flagged)]
                   for j, x, c in zip(gap.included, gap.probit4, gap.c)])
        summary["probit_gap"] = {"slope": gap.slope, "intercept": gap.intercept,
                                 "excluded": gap.excluded, "flagged": gap.flagged,
                                 "n_included": len(inc)}
    else:
        summary["indices"] = None
        summary["note"] = "predictions and indices need both target levels"
    _write_json(_path(cfg, "fit.json"), summary)
    print(f"fit complete: method={cfg.method}, target={cfg.target}, {J} columns")
    return EXIT_OK


# ----------------------------------------------------------------------------
# cv

def cmd_cv(cfg):
    counts, profiles, arrays = _load_fit_inputs(cfg)
    cv = replace(cfg.cv, seed=named_seed(cfg.seed, "cv"))
    res = cross_validate(counts, profiles, cv, cfg.em)
    write_csv(_path(cfg, "cv_table.csv"), ["pseudo_strength", "fold", "delta"], res.table)
    write_csv(_path(cfg, "cv_summary.csv"), ["pseudo_strength", "mean_delta", "is_min"],
              [[g, res.mean_delta[g], int(g == res.best)] for g in cv.grid])
    write_csv(_path(cfg, "cv_folds.csv"), ["institution", "fold"],
              [[inst, int(f)] for inst, f in zip(counts.institutions, res.folds)])
    write_csv(_path(cfg, "cv_unseen.csv"), ["pseudo_strength", "fold", "unseen_journals"], res.unseen)
    _write_json(_path(cfg, "cv.json"), {"best_pseudo_strength": res.best, "folds": cv.folds,
                                        "grid": list(cv.grid), "seed": cv.seed,
                                        "mean_delta": {format_float(k): v
                                                       for k, v in res.mean_delta.items()}})
    print(f"best pseudo_strength {format_float(res.best)}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# report

def _fmt(x, digits=3):
    return "NA" if x is None or (isinstance(x, float) and not math.isfinite(x)) else f"{x:.{digits}f}"


def _external_rows(path):
    rows = _read_rows(_require(path, "external metrics file"))
    if rows and not {"journal_key", "issn", "score"} <= set(rows[0]):
        raise DataError(f"{path}: need columns journal_key, issn, score")
    out = []
    for r in rows:
        try:
            out.append((r["journal_key"], r["issn"], float(r["score"])))
        except ValueError:
            raise DataError(f"{path}: score {r['score']!r} is not a number") from None
    return out


def _journal_keys(cfg, columns):
    """(name, title key, issns) per column, using clusters.csv when present."""
    info = {}
    path = _path(cfg, "clusters.csv")
    if os.path.exists(path):
        for r in _read_rows(path):
            if r["column"]:
                keys = r["identifier_keys"].split(";") if r["identifier_keys"] else []
                issns = [k[5:] for k in keys if k.startswith("issn:")]
                titles = [k[6:] for k in keys if k.startswith("title:")]
                info[r["column"]] = (r["display_title"], issns, titles)
    out = []
    for col in columns:
        title, issns, _ = info.get(col, (col, [], []))
        try:
            key = normalize_title(title)
        except UnusableTitleError:
            key = ""
        out.append((col, key, issns))
    return out


def cmd_report(cfg):
    fit_json = _require(_path(cfg, "fit.json"), "fit summary (run fit first)")
    with open(fit_json, encoding="utf-8") as fh:
        summary = json.load(fh)
    lines = ["Journal league table (4*)", "=" * 26]
    league_path = _path(cfg, "league_table.csv")
    em_path = _path(cfg, "em_fit.csv")
    medians = {}
    if os.path.exists(league_path):
        rows = [r for r in _read_rows(league_path) if r["target"] == "4*"]
        rows.sort(key=lambda r: (-float(r["median"]), r["journal"]))
        lines.append(f"{'journal':40s} {'median':>7s} {'50% interval':>17s} {'95% interval':>17s} {'n':>5s}")
        for r in rows:
            medians[r["journal"]] = float(r["median"])
            lines.append(f"{r['journal'][:40]:40s} {float(r['median']):7.3f} "
                         f"({float(r['lo50']):.3f}, {float(r['hi50']):.3f}) "
                         f"({float(r['lo95']):.3f}, {float(r['hi95']):.3f}) {r['article_count']:>5s}")
    elif os.path.exists(em_path):
        rows = [r for r in _read_rows(em_path) if r["target"] == "4*"]
        rows.sort(key=lambda r: (-float(r["pi_hat"]), r["journal"]))
        lines.append(f"{'journal':40s} {'EM estimate':>11s}")
        for r in rows:
            medians[r["journal"]] = float(r["pi_hat"])
            lines.append(f"{r['journal'][:40]:40s} {float(r['pi_hat']):11.3f}")
    else:
        raise UsageError(f"missing league table: neither {league_path} nor {em_path} exists")
    lines.append("")

    pred_path = _path(cfg, "predictions.csv")
    if os.path.exists(pred_path):
        lines += ["Predicted vs actual", "=" * 19,
                  f"{'institution':30s} {'y4':>5s} {'yhat4':>8s} {'y3':>5s} {'yhat3':>8s}"]
        for r in _read_rows(pred_path):
            lines.append(f"{r['institution'][:30]:30s} {r['y4']:>5s} {float(r['yhat4']):8.2f} "
                         f"{r['y3']:>5s} {float(r['yhat3']):8.2f}")
        lines.append("")
    idx_path = _path(cfg, "indices.csv")
    if os.path.exists(idx_path):
        rows = _read_rows(idx_path)
        d = np.array([float(r["delta"]) for r in rows])
        m = np.array([float(r["delta_money"]) for r in rows])
        lines += ["Indices", "=" * 7,
                  f"median index of dissimilarity: {format_float(float(np.median(d)))}",
                  f"median redistribution of funding: {format_float(float(np.median(m)))}",
                  f"draws: {len(rows)}", ""]
    else:
        lines += ["Indices", "=" * 7, "not available (fit needs both target levels)", ""]

    for tag in ("4", "34"):
        h = summary.get(f"hmc_{tag}")
        if h:
            lines.append(f"HMC {tag}: max Rhat {_fmt(h['max_rhat'], 4)}, divergent {h['divergent']}"
                         + (" (UNRELIABLE)" if h["unreliable"] else ""))
    if summary.get("em_vs_hmc_pearson"):
        for k, v in sorted(summary["em_vs_hmc_pearson"].items()):
            lines.append(f"EM vs HMC logit correlation ({k}): {_fmt(v)}")
    gap = summary.get("probit_gap")
    if gap:
        lines.append(f"probit gap slope: {_fmt(gap['slope'], 4)} (intercept {_fmt(gap['intercept'], 4)})")
    lines.append("")

    lines += ["External metric correlation", "=" * 27]
    if cfg.metrics_csv:
        external = _external_rows(cfg.metrics_csv)
        cols = list(medians)
        journals = _journal_keys(cfg, cols)
        mc = metric_correlation([medians[c] for c in cols], journals, external, cfg.metrics_log)
        lines += [f"matched journals: {mc.n_matched}",
                  f"pearson: {_fmt(mc.pearson, 4)}  spearman: {_fmt(mc.spearman, 4)}",
                  f"OLS: median = {_fmt(mc.intercept, 4)} + {_fmt(mc.slope, 4)} * "
                  + ("log10(score)" if cfg.metrics_log else "score"),
                  "unmatched: " + (", ".join(mc.unmatched) if mc.unmatched else "none")]
    else:
        lines.append("omitted: no external metrics file supplied (--metrics-csv)")
    text = "\n".join(lines) + "\n"
    atomic_write_text(_path(cfg, "report.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="refjournals", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="build counts and profiles")
    p.add_argument("--submissions")
    p.add_argument("--results")
    p.add_argument("--uoa")
    p.add_argument("--threshold", type=int)
    p.add_argument("--resolver-url")
    p.add_argument("--resolver-cache")
    p.add_argument("--resolver-timeout", type=float)
    p = sub.add_parser("fit", parents=[common], help="fit journal models")
    p.add_argument("--method", choices=["hmc", "em", "both"])
    p.add_argument("--target", choices=["4", "34", "both"])
    p = sub.add_parser("cv", parents=[common], help="cross-validate the EM regularization")
    p = sub.add_parser("report", parents=[common], help="write report.txt")
    p.add_argument("--metrics-csv")
    p.add_argument("--metrics-log", action="store_true", help="log10-transform external scores")
    return parser


def _merge(cfg, args):
    simple = {"seed": "seed", "out_dir": "out_dir", "submissions": "submissions",
              "results": "results", "uoa": "uoa", "threshold": "threshold", "method": "method",
              "target": "target", "metrics_csv": "metrics_csv"}
    updates = {}
    for attr, key in simple.items():
        value = getattr(args, attr, None)
        if value is not None:
            updates[key] = value
    if getattr(args, "metrics_log", False):
        updates["metrics_log"] = True
    cfg = replace(cfg, **updates)
    res = {}
    if getattr(args, "resolver_url", None):
        res["url"] = args.resolver_url
    if getattr(args, "resolver_cache", None):
        res["cache"] = args.resolver_cache
    if getattr(args, "resolver_timeout", None) is not None:
        res["timeout"] = args.resolver_timeout
    if res:
        cfg = replace(cfg, resolver=replace(cfg.resolver, **res))
    return cfg


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "cv": cmd_cv, "report": cmd_report}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _merge(cfg, args)
        cfg.validate()
        if os.path.exists(cfg.out_dir) and not os.path.isdir(cfg.out_dir):
            raise UsageError(f"--out-dir is not a directory: {cfg.out_dir}")
        os.makedirs(cfg.out_dir, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"refjournals: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"refjournals: error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InitializationError, NumericalError, SupportTooLargeError, FloatingPointError) as exc:
        print(f"refjournals: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, UnusableTitleError, ValueError) as exc:
        print(f"refjournals: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
