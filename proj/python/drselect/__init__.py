"""Python bindings for the drselect retriever-selection toolkit."""

import json
from pathlib import Path

from ._drselect import (
    Error,
    ParseError,
    ValidationError,
    binary_entropy,
    delta_e,
    kendall_tau,
    ndcg_at_k,
    nqc,
    parse_run,
    rank_scores,
    rbo,
    rrf_fuse,
    run_cli,
    setwise_sort,
    sigma,
    sigma_max,
    smv,
    wig,
)

__all__ = [
    "Error",
    "ParseError",
    "ValidationError",
    "binary_entropy",
    "delta_e",
    "kendall_tau",
    "ndcg_at_k",
    "nqc",
    "parse_run",
    "rank_scores",
    "rbo",
    "rrf_fuse",
    "run_cli",
    "select",
    "setwise_sort",
    "sigma",
    "sigma_max",
    "smv",
    "wig",
]


def select(corpus, pool, out, method="larmor", seed=0, llm="mock", **options):
    """Runs `drselect select` and returns the ranking as [(dr_id, score), ...], best first.

    Extra keyword options become flags: k=20 -> --k 20, normalize=True -> --normalize.
    """
    args = ["select", "--method", method, "--corpus", str(corpus), "--pool", str(pool),
            "--out", str(out), "--seed", str(seed), "--llm", llm]
    for key, value in options.items():
        flag = "--" + key.replace("_", "-")
        if value is True:
            args.append(flag)
        elif value is not False and value is not None:
            args += [flag, str(value)]
    code, stdout, err = run_cli(args)
    if code != 0:
        raise Error(f"select exited with {code}: {err.strip()}")
    written = [line[len("wrote "):] for line in stdout.splitlines() if line.startswith("wrote ")]
    entries = json.loads(Path(written[-1]).read_text())
    return [(e["dr_id"], e["score"]) for e in entries]
