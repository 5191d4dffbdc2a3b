"""Independent recount of corpus statistics for a directory of Python repos.

Uses only the standard library (ast for definitions, re for tokens) and
prints the same TSV layout as `hirope corpus-stats`.
"""

import ast
import os
import re
import sys

TOKEN = re.compile(r"\w+|[^\w\s]")


def def_offsets(source):
    line_starts = [0]
    raw = source.encode("utf-8")
    for i, b in enumerate(raw):
        if b == ord("\n"):
            line_starts.append(i + 1)
    names, offsets = set(), []
    for node in ast.walk(ast.parse(source)):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            names.add(node.name)
            offsets.append(line_starts[node.lineno - 1] + node.col_offset)
    return names, offsets


def collect(root):
    groups = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            if not name.endswith(".py"):
                continue
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root).split(os.sep)
            repo = rel[0] if len(rel) > 1 else "."
            with open(path, encoding="utf-8") as f:
                source = f.read()
            names, offsets = def_offsets(source)
            groups.setdefault(repo, []).append((len(TOKEN.findall(source)), len(names), offsets))
    return groups


def fmt(x):
    return repr(int(x)) if float(x).is_integer() else repr(x)


def row(label, files):
    offsets = [o for _, _, offs in files for o in offs]
    lo = str(min(offsets)) if offsets else "-"
    hi = str(max(offsets)) if offsets else "-"
    mean_len = sum(n for n, _, _ in files) / len(files)
    mean_sym = sum(s for _, s, _ in files) / len(files)
    return f"{label}\t{len(files)}\t{fmt(mean_len)}\t{fmt(mean_sym)}\t{lo}\t{hi}"


def main():
    root = sys.argv[1]
    groups = collect(root)
    print("repo\tfiles\tmean_length_tokens\tmean_symbols\tmin_symbol_loc_bytes\tmax_symbol_loc_bytes")
    everything = []
    for repo in sorted(groups):
        print(row(repo, groups[repo]))
        everything.extend(groups[repo])
    print(row("TOTAL", everything))


if __name__ == "__main__":
    main()
