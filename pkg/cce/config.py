"""
Module: Pipeline configuration

The configuration file is a UTF-8 INI file with the sections ``model``, ``analysis``, ``plan``, ``loss``,
``schedule`` and ``evaluation``. Every key has a default; a missing file section keeps all of its defaults.
Unknown sections and keys, and values of the wrong type, raise ConfigError. The full key reference is in
``docs/configuration.rst``.
"""

import configparser
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Dict, Optional, Tuple

from cce.algorithms.redundancy.thresholding import ENERGY_BUDGET, ThresholdPolicy
from cce.exceptions import ConfigError
from cce.simulation.noise.perturb_tokens import NOISE_KINDS, SUBSTITUTION


@dataclass(frozen=True)
class ModelSection:
    layers: int = 6
    hidden: int = 64
    heads: int = 4
    vocab: int = 256
    max_sequence_length: int = 64
    ffn_multiplier: int = 4
    train_steps: int = 300
    batch_size: int = 16
    learning_rate: float = 0.003
    weight_decay: float = 0.01
    corpus_sequences: int = 512
    successor_probability: float = 0.75
    observation_noise: float = 0.2
    planted_redundancy_rank: int = 0


@dataclass(frozen=True)
class AnalysisSection:
    projection_dim: int = 64
    transform_count: int = 4
    epsilon_scale: float = 1e-6
    cluster_quantile: float = 0.25
    hessian_diagnostic: bool = False


@dataclass(frozen=True)
class PlanSection:
    global_budget: float = 0.6
    threshold_mode: str = ENERGY_BUDGET
    energy_budget: float = 0.95
    fixed_tau: float = 0.0
    end_layer_energy: float = 0.98

    def policy(self) -> ThresholdPolicy:
        return ThresholdPolicy(self.threshold_mode, self.energy_budget, self.fixed_tau)


@dataclass(frozen=True)
class LossSection:
    alpha: float = 1.0
    beta: float = 0.01
    gamma: float = 0.0001
    # 'lambda' is a keyword; the INI key is mapped on load
    lam: float = 1.0
    tau: float = 0.05
    fine_tune_steps: int = 50
    step_size: float = 0.01
    calibrate: bool = True


@dataclass(frozen=True)
class ScheduleSection:
    steps: int = 3
    divergence_ceiling: float = 10.0
    divergence_floor: float = 1e-8
    workers: int = 1


@dataclass(frozen=True)
class EvaluationSection:
    probe_count: int = 256
    eval_sequences: int = 64
    classification_examples: int = 256
    noise_levels: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    noise_kind: str = SUBSTITUTION
    quantize_bits: int = 8


INI_ALIASES = {'lambda': 'lam'}


@dataclass(frozen=True)
class CCEConfig:
    model: ModelSection = field(default_factory=ModelSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    plan: PlanSection = field(default_factory=PlanSection)
    loss: LossSection = field(default_factory=LossSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> Dict:
        """Returns the configuration as nested dicts, with the INI key names."""
        result = asdict(self)
        result['loss']['lambda'] = result['loss'].pop('lam')
        result['evaluation']['noise_levels'] = list(self.evaluation.noise_levels)
        return result


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(item) for item in raw.split(',') if item.strip())
        return raw.strip()
    except (KeyError, ValueError) as error:
        raise ConfigError(f'[{section}] {key}: invalid value {raw!r} for a {type(default).__name__}') from error


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def validate(config: CCEConfig):
    """Checks the ranges of the configuration values."""
    model = config.model
    _require(model.layers >= 2, '[model] layers must be at least 2')
    _require(min(model.hidden, model.heads, model.vocab, model.max_sequence_length, model.ffn_multiplier) >= 1,
             '[model] dimensions must be positive')
    _require(model.hidden % model.heads == 0, '[model] hidden must be divisible by heads')
    _require(model.train_steps >= 0 and model.batch_size >= 1 and model.corpus_sequences >= 1, '[model] training sizes out of range')
    _require(model.learning_rate > 0 and model.weight_decay >= 0, '[model] learning_rate must be positive and weight_decay non-negative')
    _require(0 <= model.successor_probability <= 1, '[model] successor_probability must be in [0, 1]')
    _require(0 <= model.observation_noise <= 1, '[model] observation_noise must be in [0, 1]')
    _require(model.planted_redundancy_rank >= 0, '[model] planted_redundancy_rank must be non-negative')

    analysis = config.analysis
    _require(analysis.projection_dim >= 1 and analysis.transform_count >= 1,
             '[analysis] projection_dim and transform_count must be positive')
    _require(analysis.epsilon_scale > 0, '[analysis] epsilon_scale must be positive')
    _require(0 <= analysis.cluster_quantile <= 1, '[analysis] cluster_quantile must be in [0, 1]')

    plan = config.plan
    _require(0 < plan.global_budget <= 1, '[plan] global_budget must be in (0, 1]')
    _require(0 < plan.end_layer_energy <= 1, '[plan] end_layer_energy must be in (0, 1]')
    try:
        plan.policy()
    except ValueError as error:
        raise ConfigError(f'[plan] {error}') from error

    loss = config.loss
    _require(min(loss.alpha, loss.beta, loss.gamma, loss.lam, loss.tau) >= 0, '[loss] coefficients must be non-negative')
    _require(loss.fine_tune_steps >= 0 and loss.step_size > 0, '[loss] fine_tune_steps must be non-negative and step_size positive')

    schedule = config.schedule
    _require(schedule.steps >= 1, '[schedule] steps must be at least 1')
    _require(schedule.divergence_ceiling > 1 and schedule.divergence_floor >= 0, '[schedule] divergence_ceiling must exceed 1')
    _require(schedule.workers >= 1, '[schedule] workers must be at least 1')

    evaluation = config.evaluation
    _require(min(evaluation.probe_count, evaluation.eval_sequences, evaluation.classification_examples) >= 1,
             '[evaluation] sizes must be positive')
    levels = evaluation.noise_levels
    _require(len(levels) >= 1 and all(0 <= level <= 1 for level in levels), '[evaluation] noise_levels must lie in [0, 1]')
    _require(all(b > a for a, b in zip(levels, levels[1:])), '[evaluation] noise_levels must be strictly increasing')
    _require(evaluation.noise_kind in NOISE_KINDS, f'[evaluation] noise_kind must be one of {NOISE_KINDS}')
    _require(evaluation.quantize_bits >= 1, '[evaluation] quantize_bits must be at least 1')


def parse_config(text: str, source: str = '<config>') -> CCEConfig:
    """
    Parses configuration text.

    :param text: The INI text.
    :param source: Name of the source, used in error messages.
    :raises ConfigError: on syntax errors, unknown sections or keys, and invalid values.
    """
    parser = configparser.ConfigParser(interpolation=None, default_section='__no_defaults__')
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as error:
        raise ConfigError(f'{source}: {error}') from error

    sections = {f.name: f.default_factory() for f in fields(CCEConfig)}
    unknown_sections = set(parser.sections()) - set(sections)
    if unknown_sections:
        raise ConfigError(f'{source}: unknown sections {sorted(unknown_sections)}')

    values = {}
    for name, defaults in sections.items():
        known = {f.name: getattr(defaults, f.name) for f in fields(defaults)}
        updates = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                attribute = INI_ALIASES.get(key, key)
                if attribute not in known or key in INI_ALIASES.values():
                    raise ConfigError(f'{source}: unknown key {key!r} in section [{name}]')
                updates[attribute] = _convert(name, key, raw, known[attribute])
        values[name] = type(defaults)(**{**known, **updates})
    return CCEConfig(**values)


def load_config(path: Optional[str] = None) -> CCEConfig:
    """Loads a configuration file, or returns the defaults when no path is given."""
    if path is None:
        return CCEConfig()
    try:
        text = Path(path).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as error:
        raise ConfigError(f'Cannot read configuration {path}: {error}') from error
    return parse_config(text, str(path))
