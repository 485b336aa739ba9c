"""Bundled network fixtures and the case-file schema notes.

Case files are JSON documents with top-level keys:

    base_kv   float, voltage base in kV
    base_mva  float, power base in MVA (line blocks are siemens, normalized
              on load by y_base = base_mva / base_kv**2)
    buses     [{"id": str, "phases": ["a"|"b"|"c", ...], "kind": "slack"|"load"}]
    lines     [{"from": id, "to": id, "phases": [...],
                "y_series": [[[re, im], ...], ...],   # |P| x |P| complex
                "y_shunt":  [[[re, im], ...], ...]}]
    inverters [{"bus": id, "phase": ph, "s_rating": pu, "p_actual": pu}]

``case2``: 2-bus single-phase line, series admittance -10j S, no shunt.
``case4``: 4-bus three-phase feeder (12 nodes), lossless coupled line blocks,
mixed line phase sets ({a,b,c} trunk, {b,c} and {a} laterals), two inverters.
"""

from importlib import resources


def case_path(name: str) -> str:
    """Filesystem path of a bundled case (name without extension)."""
    ref = resources.files(__package__).joinpath(f"{name}.json")
    with resources.as_file(ref) as p:
        return str(p)
