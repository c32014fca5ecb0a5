"""Plot-ready text output: delimited columns under '#'-prefixed headers.

Every file starts with `# key = value` metadata lines (config hash and seed
at minimum) followed by a `# columns:` line naming the fields, so the files
are self-describing, diff-friendly, and trivially loadable with
numpy.loadtxt or any plotting tool. Formatting is deterministic: identical
inputs produce byte-identical files.
"""

import os

import numpy as np

__all__ = ["write_table", "read_table", "write_signal", "write_dispersion",
           "write_trace"]


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path, names, rows, meta):
    """Write one delimited table with metadata header lines."""
    lines = [f"# {k} = {_fmt(v)}" for k, v in meta.items()]
    lines.append("# columns: " + " ".join(names))
    for row in rows:
        cells = [_fmt(v) for v in row]
        if len(cells) != len(names):
            raise ValueError(f"row width {len(cells)} does not match "
                             f"{len(names)} columns")
        lines.append(" ".join(cells))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path):
    """Inverse of write_table: (meta, names, rows); cells parsed as floats
    where possible."""
    meta, names, rows = {}, [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("columns:"):
                    names = body.split(":", 1)[1].split()
                elif "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            row = []
            for cell in line.split():
                try:
                    row.append(float(cell))
                except ValueError:
                    row.append(cell)
            rows.append(row)
    return meta, names, rows


def write_signal(path, signal, meta, name="displacement"):
    t = signal.grid.times
    x = np.asarray(signal.samples)
    write_table(path, ["time", name], zip(t, x), meta)


def write_dispersion(path, table, meta):
    names = ["frequency", "mode", "wavenumber", "phase_velocity",
             "group_velocity"]
    write_table(path, names, table.rows(), meta)


def write_trace(path, trace, meta):
    """Reconstruction history: one row per recorded iterate."""
    d = len(trace.iterates[0]) if trace.iterates else 0
    names = (["n", "alpha", "objective", "step_norm"]
             + [f"q{i + 1}" for i in range(d)])
    if trace.errors is not None:
        names.append("error")
    rows = []
    nan = float("nan")
    for n, q in enumerate(trace.iterates):
        alpha = trace.alphas[n] if n < len(trace.alphas) else nan
        step = trace.step_norms[n] if n < len(trace.step_norms) else nan
        row = [n, alpha, trace.objectives[n], step] + list(q)
        if trace.errors is not None:
            row.append(trace.errors[n])
        rows.append(row)
    write_table(path, names, rows, meta)
