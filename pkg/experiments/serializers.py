import json
import logging

import numpy as np
from django.conf import settings
from rest_framework import serializers
from rest_framework.serializers import ValidationError

from domain.catalog import get_entry
from domain.choices import direction_rule_choices, octahedral_sizes, potential_choices, source_choices

from .choices import experiment_kind_choices, kinds_requiring_source, solver_method_choices

logger = logging.getLogger(__name__)


class PotentialReferenceSerializer(serializers.Serializer):
    """Catalog potential by name; parameters are completed with their defaults and range-checked."""
    name = serializers.ChoiceField(choices=potential_choices)
    parameters = serializers.DictField(child=serializers.FloatField(), default=dict)
    support_tol = serializers.FloatField(min_value=1e-16, max_value=1e-2, allow_null=True, default=None)

    def validate(self, data: dict) -> dict:
        entry = get_entry(data['name'], kind='potential')
        data['parameters'] = entry.resolve_parameters(data['parameters'])
        # parameter combinations are checked when the profile is built
        entry.profile_factory(**data['parameters'])
        return data


class SourceReferenceSerializer(serializers.Serializer):
    name = serializers.ChoiceField(choices=source_choices)
    parameters = serializers.DictField(child=serializers.FloatField(), default=dict)
    resolution = serializers.FloatField(min_value=1e-3, max_value=2.0, allow_null=True, default=None)

    def validate(self, data: dict) -> dict:
        data['parameters'] = get_entry(data['name'], kind='source').resolve_parameters(data['parameters'])
        return data


class WaveSerializer(serializers.Serializer):
    k = serializers.ListField(child=serializers.FloatField(), min_length=3, max_length=3)
    distance = serializers.FloatField(min_value=1e-6, default=100.0)
    distances = serializers.ListField(child=serializers.FloatField(min_value=1e-6), default=list)

    def validate(self, data: dict) -> dict:
        if not np.linalg.norm(data['k']) > 0:
            raise ValidationError({'k': 'Wave vector must be nonzero.'})
        if np.any(np.diff(data['distances']) <= 0):
            raise ValidationError({'distances': 'Source distances must be strictly increasing.'})
        return data


class GridSerializer(serializers.Serializer):
    spacing = serializers.FloatField(min_value=0.05, max_value=2.0, default=0.4)
    evolution_cells = serializers.IntegerField(min_value=8, max_value=256, default=24)


class DirectionsSerializer(serializers.Serializer):
    rule = serializers.ChoiceField(choices=direction_rule_choices, default='octahedral')
    points = serializers.ChoiceField(choices=octahedral_sizes, default=settings.SCATTERLAB_DIRECTION_GRID_POINTS)
    n_theta = serializers.IntegerField(min_value=2, max_value=200, default=12)
    n_phi = serializers.IntegerField(min_value=3, max_value=400, default=24)


class SolverSerializer(serializers.Serializer):
    tol = serializers.FloatField(min_value=1e-15, max_value=1e-2, default=settings.SCATTERLAB_SOLVER_TOL)
    method = serializers.ChoiceField(choices=solver_method_choices, default='auto')
    sigma = serializers.FloatField(min_value=1.5, max_value=10.0, default=settings.SCATTERLAB_WEIGHT_SIGMA)


class TimeSerializer(serializers.Serializer):
    t_final = serializers.FloatField(min_value=0.0, allow_null=True, default=None)
    absorber_fraction = serializers.FloatField(min_value=0.0, max_value=0.45,
                                               default=settings.SCATTERLAB_ABSORBER_FRACTION)
    source_distance = serializers.FloatField(min_value=1e-6, allow_null=True, default=None)
    export_snapshots = serializers.BooleanField(default=False)


class FluxSerializer(serializers.Serializer):
    radius_factors = serializers.ListField(child=serializers.FloatField(min_value=1.0), min_length=2,
                                           default=lambda: [50.0, 100.0, 200.0])
    disk_radius = serializers.FloatField(min_value=1e-3, default=1.0)


class ExperimentConfigSerializer(serializers.Serializer):
    """
    One experiment: what to scatter, how finely, and which recipe to run.

    Nested sections left out of the document are filled with their defaults, so
    the validated data is a complete, self-describing echo of the run.
    """
    kind = serializers.ChoiceField(choices=experiment_kind_choices)
    potential = PotentialReferenceSerializer()
    source = SourceReferenceSerializer(required=False, allow_null=True)
    wave = WaveSerializer()
    grid = GridSerializer(required=False)
    directions = DirectionsSerializer(required=False)
    solver = SolverSerializer(required=False)
    time = TimeSerializer(required=False)
    flux = FluxSerializer(required=False)
    k_values = serializers.ListField(child=serializers.FloatField(min_value=0.05, max_value=20.0),
                                     default=lambda: [0.5, 1.0, 2.0])
    seed = serializers.IntegerField(default=0)
    output_dir = serializers.CharField(default=settings.SCATTERLAB_OUTPUT_DIR)

    sections = {
        'grid': GridSerializer,
        'directions': DirectionsSerializer,
        'solver': SolverSerializer,
        'time': TimeSerializer,
        'flux': FluxSerializer,
    }

    def validate(self, data: dict) -> dict:
        for name, section in self.sections.items():
            if name not in data:
                defaults = section(data={})
                defaults.is_valid(raise_exception=True)
                data[name] = defaults.validated_data

        if data['kind'] in kinds_requiring_source and not data.get('source'):
            raise ValidationError({'source': f'Experiment kind {data["kind"]} needs a source.'})
        if data['kind'] == 'convergence-D' and len(data['wave']['distances']) < 2:
            raise ValidationError({'wave': 'convergence-D needs at least two source distances.'})
        data.setdefault('source', None)
        return data

    @property
    def echo(self) -> dict:
        """Validated data as plain JSON types."""
        return json.loads(json.dumps(self.validated_data))
