"""Build the desk-scale character corpus from Python standard-library docstrings.

No large English corpus ships with the environment, so module, class and
function docstrings of the installed standard library stand in for one. The
text is normalized to lowercase letters and single spaces and truncated.

    python3 scripts/build_corpus.py --out src/drnn/data/stdlib_docs_1m.txt.gz
"""
import argparse
import ast
import gzip
import sys
import sysconfig
from pathlib import Path

from drnn.tasks import normalize_text

SKIP = {"test", "tests", "idlelib", "site-packages", "dist-packages", "lib2to3", "turtledemo"}


def docstrings(root: Path):
    for path in sorted(root.rglob("*.py")):
        if SKIP.intersection(path.relative_to(root).parts):
            continue
        try:
            tree = ast.parse(path.read_text(encoding="utf-8"))
        except (SyntaxError, UnicodeDecodeError, OSError):
            continue
        for node in ast.walk(tree):
            if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
                doc = ast.get_docstring(node)
                if doc:
                    yield doc


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("src/drnn/data/stdlib_docs_1m.txt.gz"))
    ap.add_argument("--chars", type=int, default=1_000_000)
    args = ap.parse_args(argv)

    root = Path(sysconfig.get_paths()["stdlib"])
    parts, total = [], 0
    for doc in docstrings(root):
        text = normalize_text(doc, collapse=True).strip()
        if not text:
            continue
        parts.append(text)
        total += len(text) + 1
        if total >= args.chars:
            break
    corpus = " ".join(parts)[:args.chars]
    if len(corpus) < args.chars:
        sys.exit(f"only {len(corpus)} characters available")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
        fh.write(corpus.encode("ascii"))
    print(f"wrote {len(corpus)} characters to {args.out}")


if __name__ == "__main__":
    main()
