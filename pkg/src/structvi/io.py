"""JSON model, structure and result files.

Model file::

    {"variables": [{"name": "A", "cardinality": 2}, ...],
     "factors": [{"scope": ["A", "B"], "values": [...], "kind": "cpt", "child": "B"},
                 {"scope": ["B"], "values": [...], "kind": "potential"}],
     "evidence": {"B": 0}}

Values are row-major over the scope with the last name fastest.

Structure file (names refer to model variables; hidden variables are new)::

    {"hidden": [{"name": "V", "cardinality": 2}],
     "families": [{"child": "A", "parents": ["V"]}, ...],
     "potentials": [["A", "C"], ...]}

Unobserved variables without a family entry get no parents.
"""
from __future__ import annotations

import json
import math
from typing import Any, Mapping

from .model import (Evidence, FactorizedModel, StructuralError, TableFactor,
                    Variable)
from .structure import FitResult, Structure

MODEL_FORMAT_VERSION = 1


class DataError(ValueError):
    """A file's content is malformed or inconsistent."""


def _num(x: float):
    # JSON has no infinities; keep them readable and round-trippable.
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def model_from_dict(d: Mapping[str, Any]) -> tuple[FactorizedModel, dict[int, int]]:
    try:
        variables = [Variable(k, str(v["name"]), int(v["cardinality"])) for k, v in enumerate(d["variables"])]
        ids = {v.name: v.id for v in variables}
        factors, children = [], []
        for f in d["factors"]:
            scope = [ids[n] for n in f["scope"]]
            factors.append(TableFactor(scope, [variables[v].cardinality for v in scope], f["values"]))
            kind = f.get("kind", "potential")
            if kind == "cpt":
                children.append(ids[f["child"]])
            elif kind == "potential":
                children.append(None)
            else:
                raise DataError(f"unknown factor kind {kind!r}")
        ev = {ids[n]: int(s) for n, s in d.get("evidence", {}).items()}
        model = FactorizedModel(variables, factors, children)
        model.check_evidence(ev)
    except KeyError as e:
        raise DataError(f"missing or unknown name {e}") from None
    except (TypeError, ValueError) as e:
        raise DataError(str(e)) from None
    return model, ev


def model_to_dict(model: FactorizedModel, ev: Evidence | None = None) -> dict:
    factors = []
    for f, child in zip(model.factors, model.children):
        entry = {"scope": [model.name_of(v) for v in f.vars], "values": [float(x) for x in f.values]}
        if child is None:
            entry["kind"] = "potential"
        else:
            entry["kind"] = "cpt"
            entry["child"] = model.name_of(child)
        factors.append(entry)
    return {
        "format": MODEL_FORMAT_VERSION,
        "variables": [{"name": v.name, "cardinality": v.cardinality} for v in model.variables],
        "factors": factors,
        "evidence": {model.name_of(v): int(s) for v, s in sorted((ev or {}).items())},
    }


def load_model(path) -> tuple[FactorizedModel, dict[int, int]]:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: {e}") from None
    return model_from_dict(d)


def save_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")


def save_model(model: FactorizedModel, ev: Evidence, path) -> None:
    save_json(model_to_dict(model, ev), path)


def parse_evidence(text: str, model: FactorizedModel) -> dict[int, int]:
    """``"A=0,B=1"`` → {id(A): 0, id(B): 1}."""
    ev = {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        name, sep, state = part.partition("=")
        if not sep:
            raise DataError(f"bad evidence binding {part!r}")
        try:
            ev[model.id_of(name.strip())] = int(state)
        except KeyError:
            raise DataError(f"evidence on unknown variable {name.strip()!r}") from None
        except ValueError:
            raise DataError(f"bad state in {part!r}") from None
    try:
        model.check_evidence(ev)
    except StructuralError as e:
        raise DataError(str(e)) from None
    return ev


def structure_from_dict(d: Mapping[str, Any], model: FactorizedModel, ev: Evidence) -> Structure:
    try:
        hidden, names = {}, {}
        ids = {v.name: v.id for v in model.variables if v.id not in ev}
        for k, h in enumerate(d.get("hidden", [])):
            vid = -(k + 1)
            if h["name"] in ids:
                raise DataError(f"hidden name {h['name']!r} clashes with a model variable")
            ids[h["name"]] = vid
            hidden[vid] = int(h["cardinality"])
            names[vid] = h["name"]
        parents = {v: () for v in model.unobserved(ev)}
        parents.update({v: () for v in hidden})
        for fam in d.get("families", []):
            parents[ids[fam["child"]]] = tuple(ids[u] for u in fam.get("parents", []))
        pots = tuple(tuple(ids[n] for n in s) for s in d.get("potentials", []))
        s = Structure(parents, potentials=pots, hidden=hidden, hidden_names=names)
        s.check_targets(model.unobserved(ev))
        return s
    except KeyError as e:
        raise DataError(f"structure names an unknown or observed variable {e}") from None
    except (TypeError, ValueError) as e:
        raise DataError(str(e)) from None


def structure_to_dict(s: Structure, model: FactorizedModel) -> dict:
    name = lambda v: s.name_of(v) if v < 0 else model.name_of(v)
    return {
        "hidden": [{"name": s.name_of(v), "cardinality": c} for v, c in sorted(s.hidden.items(), reverse=True)],
        "families": [{"child": name(c), "parents": [name(u) for u in s.parents[c]]} for c in s.order],
        "potentials": [[name(v) for v in p] for p in s.potentials],
    }


def load_structure(path, model: FactorizedModel, ev: Evidence) -> Structure:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: {e}") from None
    return structure_from_dict(d, model, ev)


def result_to_dict(method: str, res: FitResult, model: FactorizedModel) -> dict:
    q = res.q
    inner = getattr(q, "q", q)
    hidden = getattr(inner, "hidden", {})
    hidden_names = getattr(inner, "hidden_names", {})
    name = lambda v: hidden_names.get(v, f"V{-v}") if v < 0 else model.name_of(v)
    out = {
        "method": method,
        "bound": _num(res.bound),
        "restart_index": res.restart_index,
        "restart_bounds": [_num(b) for b in res.restart_bounds],
        "trace": [_num(b) for b in res.trace],
        "flags": list(res.flags),
        "hidden": [{"name": name(v), "cardinality": c} for v, c in sorted(hidden.items(), reverse=True)],
        "families": [{"child": name(f.child), "parents": [name(u) for u in f.parents],
                      "values": [float(x) for x in f.cpt.values]} for f in inner.families],
    }
    if hasattr(q, "potentials"):
        out["potentials"] = [{"scope": [name(v) for v in p.vars], "values": [float(x) for x in p.values]}
                             for p in q.potentials]
        out["log_zq"] = _num(q.log_zq)
    if hasattr(q, "rho"):
        out["rho"] = [{"child": name(c), "values": [float(x) for x in r.values]} for c, r in q.rho.items()]
    if res.marginal_bound is not None:
        out["marginal_bound"] = _num(res.marginal_bound)
    return out
