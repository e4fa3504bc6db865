import json

import pytest
import yaml

from subexpq.chains import Gig1Chain
from subexpq.errors import DistributionError, ModelValidationError
from subexpq.heavytail import DiscreteDist, DiscreteKind, HazardForm, ServiceKind
from subexpq.modelfile import (
    MODEL_KINDS,
    dump_discrete,
    load_model,
    parse_discrete,
    parse_model,
)
from subexpq.queues import BulkModel, QueueModel

from .conftest import MODELS


@pytest.fixture()
def mm1_doc():
    with open(MODELS / "mm1.json") as f:
        yield json.load(f)


class TestLoadModel:
    @pytest.mark.parametrize("path", sorted(MODELS.glob("*.json")), ids=lambda p: p.stem)
    def test_shipped_models(self, path):
        mf = load_model(path)
        assert mf.kind in MODEL_KINDS
        assert mf.name == path.stem
        assert parse_model(json.loads(mf.echo())) == mf

    def test_kinds(self):
        assert isinstance(load_model(MODELS / "gig1-pareto.json").model, Gig1Chain)
        assert isinstance(load_model(MODELS / "mm1.json").model, QueueModel)
        bulk = load_model(MODELS / "map-m-2-5.json").model
        assert isinstance(bulk, BulkModel)
        assert (bulk.a, bulk.b) == (2, 5)

    def test_options(self):
        mf = load_model(MODELS / "mgi1-pareto.json")
        assert mf.options == {"levels": 10000, "window": [1000, 10000]}
        assert mf.asymptote == {"regime": "service-dominant"}
        assert mf.model.service.kind is ServiceKind.PARETO
        assert mf.model.h == pytest.approx(1.0)

    def test_yaml(self, mm1_doc, tmp_path):
        path = tmp_path / "mm1.yml"
        path.write_text(yaml.safe_dump(mm1_doc))
        assert load_model(path) == load_model(MODELS / "mm1.json")

    def test_broken_yaml(self, tmp_path):
        path = tmp_path / "broken.yml"
        path.write_text("kind: [gig1\n")
        with pytest.raises(ModelValidationError, match="does not parse"):
            load_model(path)


class TestParseModel:
    def test_not_an_object(self):
        with pytest.raises(ModelValidationError):
            parse_model([1, 2, 3])

    def test_unknown_kind(self, mm1_doc):
        mm1_doc["kind"] = "tandem"
        with pytest.raises(ModelValidationError, match="unknown model kind 'tandem'"):
            parse_model(mm1_doc)

    def test_unknown_option(self, mm1_doc):
        mm1_doc["options"]["speed"] = 3
        with pytest.raises(ModelValidationError, match="unknown solver options: speed"):
            parse_model(mm1_doc)

    def test_missing_service(self, mm1_doc):
        del mm1_doc["service"]
        with pytest.raises(ModelValidationError, match="missing 'service'"):
            parse_model(mm1_doc)

    def test_unknown_service(self, mm1_doc):
        mm1_doc["service"] = {"kind": "weibull", "shape": 0.5}
        with pytest.raises(ModelValidationError, match="unknown service law 'weibull'"):
            parse_model(mm1_doc)

    def test_ragged_matrix(self, mm1_doc):
        mm1_doc["bmap"]["C"] = [[-0.5, 0.1], [0.2]]
        with pytest.raises(ModelValidationError):
            parse_model(mm1_doc)

    def test_invalid_service_parameter(self, mm1_doc):
        mm1_doc["service"] = {"kind": "exponential", "rate": -1.0}
        with pytest.raises(DistributionError):
            parse_model(mm1_doc)

    def test_echo_is_canonical(self, mm1_doc):
        mf = parse_model(mm1_doc)
        doc = json.loads(mf.echo())
        assert doc["bmap"]["C"] == [[-0.5]]
        assert doc["service"] == {"kind": "exponential", "rate": 1.0}
        assert mf.echo() == parse_model(doc).echo()

    def test_different_models(self, mm1_doc):
        other = json.loads(json.dumps(mm1_doc))
        other["service"]["rate"] = 2.0
        assert parse_model(mm1_doc) != parse_model(other)

    def test_hazard(self, mm1_doc):
        mm1_doc["asymptote"] = {"regime": "service-dominant", "hazard": {"form": "power", "alpha": 0.5}}
        mf = parse_model(mm1_doc)
        assert mf.hazard.form is HazardForm.POWER
        mm1_doc["asymptote"]["hazard"]["form"] = "cubic"
        with pytest.raises(ModelValidationError, match="unknown hazard form"):
            parse_model(mm1_doc)


class TestDiscreteLaws:
    @pytest.mark.parametrize(
        "doc",
        [
            {"kind": "geometric", "p": 0.5},
            {"kind": "zeta-pareto", "alpha": 2.5, "scale": 1.0},
            {"kind": "finite-empirical", "pmf": [0.25, 0.75]},
            {"kind": "interleaved", "base": {"kind": "zeta-pareto", "alpha": 2.5, "scale": 1.0}},
        ],
    )
    def test_parse_and_dump(self, doc):
        assert dump_discrete(parse_discrete(doc)) == doc

    def test_spliced(self):
        d = parse_discrete(
            {
                "kind": "spliced",
                "head": [0.0, 0.5],
                "coefficient": 2.0,
                "dist": {"kind": "geometric", "p": 0.5},
            }
        )
        assert d.kind is DiscreteKind.SPLICED
        assert d.pmf(1) == pytest.approx(0.5)

    def test_unknown(self):
        with pytest.raises(ModelValidationError, match="unknown discrete law"):
            parse_discrete({"kind": "poisson", "mean": 2.0})

    def test_equilibrium_not_writable(self):
        with pytest.raises(ModelValidationError):
            parse_discrete({"kind": "equilibrium"})
        assert DiscreteDist.geometric(0.5).kind is DiscreteKind.GEOMETRIC
