"""
Model files.

A model file is a JSON (or YAML) document::

    {
      "kind": "gig1" | "bmap-queue" | "bulk-queue",
      "name": "...",
      "options": {"levels": 200, "tol": 1e-12, "seed": 1, ...},

      # gig1
      "chain": {"B0": [[...]], "B_up": <seq>, "B_down": [[[...]]], "A": <seq>},

      # bmap-queue and bulk-queue
      "bmap": {"C": [[...]], "D": [[[...]]], "tail": <tail>},
      "service": {"kind": "pareto", "alpha": 2.5, "scale": 1.5},
      "a": 2, "b": 5,                      # bulk-queue only
      "asymptote": {"regime": "service-dominant", "d_G": [...], "d_H": [...]}
    }

where ``<seq>`` is ``{"k_min": -1, "blocks": [[[...]]], "tail": <tail>}``,
``<tail>`` is ``{"v": [...], "w": [...], "dist": <law>}`` and ``<law>`` a
discrete law such as ``{"kind": "zeta-pareto", "alpha": 2.5, "scale": 1.0}``.
"""
import json
from dataclasses import dataclass, field

import numpy as np
import yaml
from loguru import logger

from .chains.blockseq import MatrixSeq, RankOneTail
from .chains.gig1core import Gig1Chain
from .errors import ModelValidationError
from .heavytail import DiscreteDist, DiscreteKind, HazardForm, HazardSpec, ServiceDist, ServiceKind
from .queues.bmapq import Bmap, QueueModel
from .queues.bulkq import BulkModel

MODEL_KINDS = ("gig1", "bmap-queue", "bulk-queue")
OPTION_KEYS = ("levels", "tol", "seed", "events", "replications", "window", "workers")


def _matrix(value, what, ndim=2):
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelValidationError(f"{what} is not a rectangular numeric array: {exc}") from exc
    if array.ndim != ndim:
        raise ModelValidationError(f"{what} must be a {ndim}-d array, got {array.ndim}-d")
    return array


def _require(doc, key, where):
    if not isinstance(doc, dict) or key not in doc:
        raise ModelValidationError(f"{where} is missing '{key}'")
    return doc[key]


# ---- discrete and service laws ----


def parse_discrete(doc):
    kind = _require(doc, "kind", "discrete law")
    try:
        kind = DiscreteKind(kind)
    except ValueError:
        raise ModelValidationError(f"unknown discrete law '{kind}'") from None
    if kind is DiscreteKind.GEOMETRIC:
        return DiscreteDist.geometric(_require(doc, "p", "geometric law"))
    if kind is DiscreteKind.DETERMINISTIC:
        return DiscreteDist.deterministic(int(_require(doc, "n", "deterministic law")))
    if kind is DiscreteKind.ZETA_PARETO:
        return DiscreteDist.zeta_pareto(_require(doc, "alpha", "zeta-pareto law"), doc.get("scale", 1.0))
    if kind is DiscreteKind.FINITE:
        return DiscreteDist.finite(_matrix(_require(doc, "pmf", "finite law"), "pmf", ndim=1))
    if kind is DiscreteKind.INTERLEAVED:
        return DiscreteDist.interleaved(parse_discrete(_require(doc, "base", "interleaved law")))
    if kind is DiscreteKind.SPLICED:
        return DiscreteDist.spliced(
            _matrix(_require(doc, "head", "spliced law"), "head", ndim=1),
            float(_require(doc, "coefficient", "spliced law")),
            parse_discrete(_require(doc, "dist", "spliced law")),
        )
    raise ModelValidationError(f"discrete law '{kind.value}' cannot be written in a model file")


def dump_discrete(d):
    kind = d.kind
    if kind is DiscreteKind.FINITE:
        return {"kind": kind.value, "pmf": d.table.tolist()}
    if kind is DiscreteKind.INTERLEAVED:
        return {"kind": kind.value, "base": dump_discrete(d.base)}
    if kind is DiscreteKind.SPLICED:
        return {
            "kind": kind.value,
            "head": d.table.tolist(),
            "coefficient": d.params["coefficient"],
            "dist": dump_discrete(d.base),
        }
    return {"kind": kind.value, **d.params}


def parse_service(doc):
    kind = _require(doc, "kind", "service law")
    try:
        kind = ServiceKind(kind)
    except ValueError:
        raise ModelValidationError(f"unknown service law '{kind}'") from None
    if kind is ServiceKind.EXPONENTIAL:
        return ServiceDist.exponential(_require(doc, "rate", "exponential service"))
    if kind is ServiceKind.ERLANG:
        return ServiceDist.erlang(_require(doc, "shape", "erlang service"), _require(doc, "rate", "erlang service"))
    if kind is ServiceKind.DETERMINISTIC:
        return ServiceDist.deterministic(_require(doc, "value", "deterministic service"))
    if kind is ServiceKind.PARETO:
        alpha = _require(doc, "alpha", "pareto service")
        if "mean" in doc:
            return ServiceDist.pareto_with_mean(alpha, doc["mean"])
        return ServiceDist.pareto(alpha, _require(doc, "scale", "pareto service"))
    if kind is ServiceKind.UNIFORM:
        return ServiceDist.uniform(_require(doc, "upper", "uniform service"))
    return ServiceDist.erlang_mixture(
        _require(doc, "weights", "erlang-mixture service"), _require(doc, "rate", "erlang-mixture service")
    )


def dump_service(s):
    params = {k: list(v) if isinstance(v, tuple) else v for k, v in s.params.items()}
    return {"kind": s.kind.value, **params}


# ---- block sequences ----


def parse_tail(doc):
    if doc is None:
        return None
    return RankOneTail(
        _matrix(_require(doc, "v", "tail"), "tail v", ndim=1),
        _matrix(_require(doc, "w", "tail"), "tail w", ndim=1),
        parse_discrete(_require(doc, "dist", "tail")),
    )


def dump_tail(tail):
    if tail is None:
        return None
    return {"v": tail.v.tolist(), "w": tail.w.tolist(), "dist": dump_discrete(tail.dist)}


def parse_seq(doc, what, k_min=None):
    blocks = _matrix(_require(doc, "blocks", what), f"{what} blocks", ndim=3)
    return MatrixSeq(blocks, int(doc.get("k_min", 0 if k_min is None else k_min)), tail=parse_tail(doc.get("tail")))


def dump_seq(seq):
    return {"k_min": seq.k_min, "blocks": seq.blocks.tolist(), "tail": dump_tail(seq.tail)}


def parse_hazard(doc):
    if doc is None:
        return None
    try:
        form = HazardForm(_require(doc, "form", "hazard"))
    except ValueError:
        raise ModelValidationError(f"unknown hazard form '{doc['form']}'") from None
    return HazardSpec(
        form,
        float(_require(doc, "alpha", "hazard")),
        c=float(doc.get("c", 1.0)),
        beta=float(doc.get("beta", 2.0)),
        x0=float(doc.get("x0", 1.0)),
    )


# ---- model files ----


@dataclass(frozen=True, eq=False)
class ModelFile:
    """
    A parsed model with its options. ``document`` is the canonical form
    rebuilt from the parsed objects; equal documents mean equal models.
    """

    kind: str
    name: str
    model: object
    options: dict = field(default_factory=dict)
    asymptote: dict = field(default_factory=dict)

    @property
    def document(self):
        doc = {"kind": self.kind, "name": self.name, "options": dict(self.options)}
        m = self.model
        if self.kind == "gig1":
            doc["chain"] = {
                "B0": m.B0.tolist(),
                "B_up": dump_seq(m.B_up),
                "B_down": m.B_down.tolist(),
                "A": dump_seq(m.A),
            }
        else:
            doc["bmap"] = {
                "C": m.bmap.C.tolist(),
                "D": m.bmap.D.blocks.tolist(),
                "tail": dump_tail(m.bmap.D.tail),
            }
            doc["service"] = dump_service(m.service)
            if self.kind == "bulk-queue":
                doc["a"], doc["b"] = m.a, m.b
        if self.asymptote:
            doc["asymptote"] = _dump_asymptote(self.asymptote)
        return doc

    def echo(self):
        return json.dumps(self.document, indent=2, sort_keys=True)

    def __eq__(self, other):
        return isinstance(other, ModelFile) and self.document == other.document

    @property
    def hazard(self):
        return parse_hazard(self.asymptote.get("hazard"))


def _dump_asymptote(section):
    out = {}
    for key, value in section.items():
        out[key] = value.tolist() if isinstance(value, np.ndarray) else value
    return out


def _parse_asymptote(doc):
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ModelValidationError("'asymptote' must be an object")
    out = dict(doc)
    for key in ("d_G", "d_H"):
        if out.get(key) is not None:
            out[key] = _matrix(out[key], key, ndim=1).tolist()
    if out.get("hazard") is not None:
        parse_hazard(out["hazard"])
    return out


def parse_model(doc):
    if not isinstance(doc, dict):
        raise ModelValidationError("a model file must hold a JSON object")
    kind = _require(doc, "kind", "model file")
    if kind not in MODEL_KINDS:
        raise ModelValidationError(f"unknown model kind '{kind}', expected one of {', '.join(MODEL_KINDS)}")
    name = str(doc.get("name", kind))
    options = doc.get("options") or {}
    unknown = set(options) - set(OPTION_KEYS)
    if unknown:
        raise ModelValidationError(f"unknown solver options: {', '.join(sorted(unknown))}")
    if kind == "gig1":
        chain_doc = _require(doc, "chain", "gig1 model")
        model = Gig1Chain(
            B0=_matrix(_require(chain_doc, "B0", "chain"), "B0"),
            B_up=parse_seq(_require(chain_doc, "B_up", "chain"), "B_up", k_min=1),
            B_down=_matrix(_require(chain_doc, "B_down", "chain"), "B_down", ndim=3),
            A=parse_seq(_require(chain_doc, "A", "chain"), "A"),
            name=name,
        )
    else:
        bmap_doc = _require(doc, "bmap", f"{kind} model")
        bmap = Bmap(
            _matrix(_require(bmap_doc, "C", "bmap"), "C"),
            MatrixSeq(
                _matrix(_require(bmap_doc, "D", "bmap"), "D", ndim=3), 1, tail=parse_tail(bmap_doc.get("tail"))
            ),
            name=name,
        )
        service = parse_service(_require(doc, "service", f"{kind} model"))
        if kind == "bmap-queue":
            model = QueueModel(bmap, service, name=name)
        else:
            a, b = _require(doc, "a", "bulk model"), _require(doc, "b", "bulk model")
            model = BulkModel(bmap, service, a, b, name=name)
    return ModelFile(
        kind=kind,
        name=name,
        model=model,
        options=dict(options),
        asymptote=_parse_asymptote(doc.get("asymptote")),
    )


def load_model(path):
    """
    Reads a JSON or YAML model file.
    """
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ModelValidationError(f"{path} does not parse: {exc}") from exc
    model = parse_model(doc)
    logger.info(f"Loaded {model.kind} model '{model.name}' from {path}")
    return model
