import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from ruamel.yaml import YAML
from ruamel.yaml.comments import CommentedMap
from ruamel.yaml.error import MarkedYAMLError, YAMLError

from tvclt import __version__, bounds, dist, metrics, stein
from tvclt.dist import DistributionSpec
from tvclt.errors import (
    DisconnectedSupport,
    NonSmoothDensity,
    ParseError,
    ScoreUndefined,
    TvcltError,
    ValidationError,
)
from tvclt.sums import GridConfig, SumSequence

logger = logging.getLogger(__name__)

# what a single case or check family may raise without taking the run down
CASE_ERRORS = (TvcltError, ValueError, ArithmeticError, IndexError)

BASE_DIR = Path(__file__).parent.parent.resolve()
SCHEMA_FILE = BASE_DIR / "config.schema.yml"
DEFAULT_SUITE = BASE_DIR / "suites" / "default.yml"

CHECK_NAMES = ("identities", "loo", "cor1", "smoothing", "intermediate")
PROFILES = ("iid", "cyclic", "explicit")
IDENTITY_TOL = 1e-5
DECAY_MIN = 3.0


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

class SchemaManager:
    def __init__(self, schema_path=SCHEMA_FILE):
        self.schema_path = Path(schema_path)
        self.schema = self._load_schema()

    def _load_schema(self):
        if not self.schema_path.exists():
            raise ParseError(f"schema file not found at {self.schema_path}")
        yaml = YAML()
        try:
            with open(self.schema_path, 'r') as f:
                return yaml.load(f)
        except YAMLError as e:
            raise ParseError(f"error loading schema: {e}")

    def get_variables(self):
        return self.schema.get('variables', [])

    def get_variable(self, name):
        for var in self.get_variables():
            if var['name'] == name:
                return var
        return None

    def _convert(self, var_type, value):
        if var_type == 'integer':
            if isinstance(value, bool) or isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if var_type == 'float':
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if var_type == 'boolean':
            if isinstance(value, str):
                return value.lower() in ('true', 'yes', '1', 'y')
            if not isinstance(value, bool):
                raise ValueError
            return value
        if var_type == 'string':
            if not isinstance(value, str):
                raise ValueError
            return str(value)
        if var_type == 'mapping':
            if not isinstance(value, dict):
                raise ValueError
            return value
        raise ValueError

    def _check_number(self, validation, value):
        min_val = validation.get('min')
        max_val = validation.get('max')
        min_excl = validation.get('min_exclusive')
        if min_val is not None and value < min_val:
            return f"Value must be >= {min_val}"
        if min_excl is not None and value <= min_excl:
            return f"Value must be > {min_excl}"
        if max_val is not None and value > max_val:
            return f"Value must be <= {max_val}"
        return None

    def validate(self, var_def, value):
        var_type = var_def.get('type')
        validation = var_def.get('validation') or {}
        allowed = var_def.get('allowed_values')

        # Type conversion and basic check
        try:
            if var_type == 'list':
                if isinstance(value, str):
                    value = [x.strip() for x in value.split(',') if x.strip()]
                if not isinstance(value, (list, tuple)):
                    raise ValueError
                item_type = var_def.get('item_type', 'string')
                value = [self._convert(item_type, v) for v in value]
            else:
                value = self._convert(var_type, value)
        except (ValueError, TypeError):
            return False, f"Invalid type. Expected {var_type}."

        # Allowed values
        if allowed:
            if var_type == 'list':
                bad = [v for v in value if v not in allowed]
            elif var_type == 'mapping':
                bad = [k for k in value if k not in allowed]
            else:
                bad = [] if value in allowed else [value]
            if bad:
                return False, f"Value must be one of: {', '.join(allowed)}"

        # Numeric validation
        if var_type in ('integer', 'float'):
            problem = self._check_number(validation, value)
            if problem:
                return False, problem
        if var_type == 'integer' and validation.get('power_of_two') and value & (value - 1):
            return False, "Value must be a power of two"

        if var_type == 'list':
            if validation.get('non_empty') and not value:
                return False, "List must not be empty"
            if var_def.get('item_type') in ('integer', 'float'):
                for v in value:
                    problem = self._check_number(validation, v)
                    if problem:
                        return False, problem
            if validation.get('ascending') and any(b <= a for a, b in zip(value, value[1:])):
                return False, "Values must be strictly ascending"
            if validation.get('descending') and any(b >= a for a, b in zip(value, value[1:])):
                return False, "Values must be strictly descending"

        # Regex validation
        regex_pattern = validation.get('regex')
        if regex_pattern and var_type == 'string':
            if not re.match(regex_pattern, value):
                return False, f"Value does not match required pattern: {regex_pattern}"

        return True, value


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SequenceRule:
    """How summand k of a named sequence is built."""

    name: str
    profile: str
    base: Optional[DistributionSpec] = None
    sigmas: tuple = ()
    specs: tuple = ()

    def sigma(self, k):
        if self.sigmas:
            return self.sigmas[(k - 1) % len(self.sigmas)]
        return 1.0 + (k % 3)

    def build(self, n) -> SumSequence:
        if self.profile == 'iid':
            specs = (self.base,) * n
        elif self.profile == 'cyclic':
            specs = tuple(self.base.with_std(self.sigma(k)) for k in range(1, n + 1))
        else:
            specs = self.specs[:n]
        return SumSequence(specs, self.name)

    @property
    def max_n(self):
        """Longest sum the rule can build; None when unbounded."""
        return len(self.specs) if self.profile == 'explicit' else None

    def distinct_specs(self, n):
        return tuple(dict.fromkeys(self.build(n).specs))

    def to_mapping(self):
        out = {'name': self.name, 'profile': self.profile}
        if self.base is not None:
            out['base'] = self.base.to_mapping()
        if self.sigmas:
            out['sigmas'] = list(self.sigmas)
        if self.specs:
            out['specs'] = [s.to_mapping() for s in self.specs]
        return out


@dataclass(frozen=True)
class Checks:
    identities: bool = True
    loo: bool = True
    cor1: bool = True
    smoothing: bool = True
    intermediate: bool = True


@dataclass(frozen=True)
class PerturbationConfig:
    base: DistributionSpec
    n_values: tuple = (4, 16, 64)
    t_values: tuple = (0.5, 1.0, 2.0)
    epsilon_values: tuple = (0.1, 0.5)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    sequences: tuple
    n_values: tuple
    epsilon_grid: tuple
    delta_grid: tuple
    grid: GridConfig
    c: float = 1.0
    out_dir: Path = Path("results")
    formats: tuple = ("csv", "json")
    threads: int = 1
    seed: int = stein.RANDOM_SEED
    checks: Checks = Checks()
    perturbation: Optional[PerturbationConfig] = None
    source: Optional[str] = field(default=None, repr=False, compare=False)

    def with_overrides(self, out_dir=None, formats=None, threads=None, seed=None):
        changes = {}
        if out_dir is not None:
            changes['out_dir'] = Path(out_dir)
        if formats:
            changes['formats'] = tuple(formats)
        if threads is not None:
            if threads < 1:
                raise ValidationError('threads', "Value must be >= 1")
            changes['threads'] = int(threads)
        if seed is not None:
            changes['seed'] = int(seed)
        return replace(self, **changes) if changes else self

    def to_mapping(self):
        out = {
            'name': self.name,
            'sequences': [rule.to_mapping() for rule in self.sequences],
            'n_values': list(self.n_values),
            'epsilon_grid': list(self.epsilon_grid),
            'delta_grid': list(self.delta_grid),
            'grid_m': self.grid.m,
            'extent_sigmas': self.grid.extent_sigmas,
            'c_constant': self.c,
            'out_dir': str(self.out_dir),
            'formats': list(self.formats),
            'threads': self.threads,
            'seed': self.seed,
            'checks': {name: getattr(self.checks, name) for name in CHECK_NAMES},
        }
        if self.perturbation is not None:
            pc = self.perturbation
            out['perturbation'] = {'base': pc.base.to_mapping(), 'n_values': list(pc.n_values),
                                 't_values': list(pc.t_values),
                                 'epsilon_values': list(pc.epsilon_values)}
        return out


def _line_of(doc, key):
    try:
        return doc.lc.key(key)[0] + 1
    except (AttributeError, KeyError, TypeError):
        return None


def _plain(value):
    """Strip ruamel round-trip wrappers."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, bool):
        return bool(value)
    if isinstance(value, int):
        return int(value)
    if isinstance(value, float):
        return float(value)
    if isinstance(value, str):
        return str(value)
    return value


def _spec(mapping, where):
    if not isinstance(mapping, dict):
        raise ValidationError(where, "expected a mapping with a 'family' key")
    if 'family' not in mapping:
        raise ValidationError(f"{where}.family", "missing")
    unknown = set(mapping) - {'family', 'params', 'scale', 'shift', 'blur'}
    if unknown:
        raise ValidationError(f"{where}.{sorted(unknown)[0]}", "unknown key")
    try:
        return DistributionSpec.from_mapping(mapping)
    except (ValueError, TypeError, KeyError) as e:
        raise ValidationError(where, str(e))


def _float_tuple(values, where, positive=True):
    if not isinstance(values, list) or not values:
        raise ValidationError(where, "expected a non-empty list of numbers")
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ValidationError(where, "expected numbers")
    if positive and any(not v > 0 for v in out):
        raise ValidationError(where, "values must be positive")
    return out


def _parse_sequences(items, max_n):
    rules = []
    names = set()
    for i, item in enumerate(items):
        where = f"sequences[{i}]"
        if not isinstance(item, dict):
            raise ValidationError(where, "expected a mapping")
        unknown = set(item) - {'name', 'profile', 'base', 'sigmas', 'specs'}
        if unknown:
            raise ValidationError(f"{where}.{sorted(unknown)[0]}", "unknown key")
        name = item.get('name')
        if not isinstance(name, str) or not re.match(r"^[A-Za-z0-9_.-]+$", name):
            raise ValidationError(f"{where}.name", "must be a simple identifier")
        if name in names:
            raise ValidationError(f"{where}.name", f"duplicate sequence name {name!r}")
        names.add(name)
        profile = item.get('profile', 'iid')
        if profile not in PROFILES:
            raise ValidationError(f"{where}.profile", f"Value must be one of: {', '.join(PROFILES)}")
        if profile == 'explicit':
            specs = item.get('specs')
            if not isinstance(specs, list) or len(specs) < max_n:
                raise ValidationError(f"{where}.specs", f"explicit list must cover n = {max_n}")
            specs = tuple(_spec(s, f"{where}.specs[{j}]") for j, s in enumerate(specs))
            rules.append(SequenceRule(name, profile, specs=specs))
            continue
        base = _spec(item.get('base'), f"{where}.base")
        sigmas = ()
        if profile == 'cyclic' and item.get('sigmas') is not None:
            sigmas = _float_tuple(item['sigmas'], f"{where}.sigmas")
        rules.append(SequenceRule(name, profile, base=base, sigmas=sigmas))
    return tuple(rules)


def _parse_perturbation(block):
    if block is None:
        return None
    base = _spec(block.get('base', {'family': 'smoothed_rademacher'}), "perturbation.base")
    defaults = PerturbationConfig(base)
    n_values = defaults.n_values
    if block.get('n_values') is not None:
        n_values = tuple(int(v) for v in _float_tuple(block['n_values'], "perturbation.n_values"))
    t_values = defaults.t_values
    if block.get('t_values') is not None:
        t_values = _float_tuple(block['t_values'], "perturbation.t_values")
    eps_values = defaults.epsilon_values
    if block.get('epsilon_values') is not None:
        eps_values = _float_tuple(block['epsilon_values'], "perturbation.epsilon_values")
    return PerturbationConfig(base, n_values, t_values, eps_values)


def config_from_document(doc, source=None, schema=None) -> ExperimentConfig:
    schema = schema or SchemaManager()
    known = {var['name']: var for var in schema.get_variables()}
    for key in doc:
        if key not in known:
            raise ParseError("unknown key", line=_line_of(doc, key), field=str(key))

    values = {}
    for name, var in known.items():
        raw = doc.get(name, var.get('default'))
        if raw is None:
            values[name] = None
            continue
        ok, result = schema.validate(var, _plain(raw))
        if not ok:
            raise ValidationError(name, result)
        values[name] = result

    n_values = tuple(values['n_values'])
    checks = values['checks'] or {}
    for key, flag in checks.items():
        if not isinstance(flag, bool):
            raise ValidationError(f"checks.{key}", "Invalid type. Expected boolean.")
    eps = values['epsilon_grid']
    eps_grid = tuple(eps) if eps is not None else tuple(float(v) for v in np.logspace(-3, 0, 50))
    try:
        grid = GridConfig(m=values['grid_m'], extent_sigmas=values['extent_sigmas'])
    except ValueError as e:
        raise ValidationError('grid_m', str(e))

    return ExperimentConfig(
        name=values['name'],
        sequences=_parse_sequences(values['sequences'], max(n_values)),
        n_values=n_values,
        epsilon_grid=eps_grid,
        delta_grid=tuple(values['delta_grid']),
        grid=grid,
        c=values['c_constant'],
        out_dir=Path(values['out_dir']),
        formats=tuple(values['formats']),
        threads=values['threads'],
        seed=values['seed'],
        checks=Checks(**checks),
        perturbation=_parse_perturbation(values['perturbation']),
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    """Read, validate and fill defaults for an experiment config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e.strerror}")
    yaml = YAML()
    yaml.preserve_quotes = True
    try:
        doc = yaml.load(text)
    except MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ParseError(e.problem or str(e), line=line)
    except YAMLError as e:
        raise ParseError(str(e))
    if doc is None:
        doc = CommentedMap()
    if not isinstance(doc, dict):
        raise ParseError("top level must be a mapping", line=1)
    logger.debug("loaded config %s", path)
    return config_from_document(doc, source=text)


def save_config(config: ExperimentConfig, path):
    """Write the config back out; a loaded config is echoed byte for byte."""
    path = Path(path)
    if config.source is not None:
        path.write_text(config.source)
        return path
    yaml = YAML()
    yaml.default_flow_style = None
    with open(path, 'w') as f:
        yaml.dump(config.to_mapping(), f)
    return path


# ---------------------------------------------------------------------------
# Run
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseFailure:
    """A case or check family that raised; ``n`` is None when the whole family failed."""
    sequence: str
    n: Optional[int]
    error: str
    message: str
    check: str = 'case'


@dataclass
class RunReport:
    config: dict
    version: str = __version__
    cases: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    identities: list = field(default_factory=list)
    lindeberg: dict = field(default_factory=dict)
    feller: dict = field(default_factory=dict)
    cor1: list = field(default_factory=list)
    smoothing: dict = field(default_factory=dict)
    perturbation: Optional[dict] = None
    rates: dict = field(default_factory=dict)
    elapsed: float = 0.0  # console only, never serialized

    @property
    def failed_cases(self):
        return [c for c in self.cases if not (c.bound_holds and c.intermediate_holds)]

    @property
    def failed_checks(self):
        rows = [r for r in self.identities if not r['holds']]
        rows += [r for r in self.cor1 if not r['holds']]
        if self.perturbation is not None and not self.perturbation.get('holds', True):
            rows.append({'check': 'perturbation', 'subject': self.perturbation.get('base')})
        return rows

    @property
    def ok(self):
        return not (self.failures or self.failed_cases or self.failed_checks)


def _check_row(check, subject, detail, lhs, rhs, holds):
    return {'check': check, 'subject': subject, 'detail': detail,
            'lhs': float(lhs), 'rhs': float(rhs), 'holds': bool(holds)}


def _error_row(check, subject, error):
    return {'check': check, 'subject': subject, 'detail': f"{type(error).__name__}: {error}",
            'lhs': math.nan, 'rhs': math.nan, 'holds': False}


def _distinct_bases(config):
    specs = {}
    for rule in config.sequences:
        for spec in rule.distinct_specs(min(max(config.n_values), 3)):
            specs.setdefault(spec.with_std(1.0), None)
    specs.setdefault(DistributionSpec.normal(1.0), None)
    return list(specs)


def _spec_identity_rows(spec):
    rows = []
    label = spec.label()
    try:
        for fname in ('sin', 'tanh', 'arctan', 'bump'):
            fn = stein.SMOOTH_FUNCTIONS[fname]
            check = stein.check_ibp_score(spec, fn)
            rows.append(_check_row('ibp_score', label, fname, check.lhs, check.rhs,
                                   check.holds(IDENTITY_TOL)))
        entropy = bounds.entropy_inequality(spec)
        rows.append(_check_row('entropy', label, 'D <= (J-1)/2', entropy.d,
                               (entropy.j - 1.0) / 2.0, entropy.holds))
    except (NonSmoothDensity, ScoreUndefined):
        logger.debug("%s has no smooth density; score identities skipped", label)
    except CASE_ERRORS as e:
        logger.warning("score identities for %s failed: %s", label, e)
        rows.append(_error_row('ibp_score', label, e))
    try:
        for fname in ('sin', 'tanh', 'arctan', 'bump'):
            fn = stein.SMOOTH_FUNCTIONS[fname]
            check = stein.check_kernel_identity(spec, fn)
            rows.append(_check_row('kernel_identity', label, fname, check.lhs, check.rhs,
                                   check.holds(IDENTITY_TOL)))
        moment = stein.check_truncated_kernel_moment(spec, 1.0)
        rows.append(_check_row('truncated_kernel', label, 'b=1', moment.lhs, moment.rhs,
                               moment.holds))
        rows.append(_check_row('chebyshev_association', label, 'b=1', moment.association_lhs,
                               moment.rhs, moment.association_holds))
    except DisconnectedSupport:
        logger.debug("%s has disconnected support; kernel identities skipped", label)
    except CASE_ERRORS as e:
        logger.warning("kernel identities for %s failed: %s", label, e)
        rows.append(_error_row('kernel_identity', label, e))
    return rows


def _stein_rows(config):
    rows = []
    bound_f = stein.SQRT_2PI + 1e-6
    for i, h in enumerate(stein.random_test_functions(20, config.seed)):
        solution = stein.solve_stein(h)
        residual = solution.residual()
        detail = f"random[{i}]"
        rows.append(_check_row('stein_residual', h.name, detail, residual, 1e-6,
                               residual < 1e-6))
        rows.append(_check_row('stein_sup_f', h.name, detail, solution.sup_f, bound_f,
                               solution.sup_f <= bound_f))
        rows.append(_check_row('stein_sup_fprime', h.name, detail, solution.sup_fprime,
                               4.0 + 1e-6, solution.sup_fprime <= 4.0 + 1e-6))
    sign = stein.solve_stein(stein.TestFunction.sign())
    f0 = float(sign.f(0.0))
    rows.append(_check_row('stein_sign_f0', 'sign', 'f(0)', f0, -stein.SQRT_HALF_PI,
                           abs(f0 + stein.SQRT_HALF_PI) < 1e-8))
    n = max(config.n_values)
    for rule in config.sequences:
        try:
            seq = rule.build(n)
            violation = stein.check_increment_bound(seq.specs[0], seq.b_n, sign)
        except CASE_ERRORS as e:
            rows.append(_error_row('increment_bound', rule.name, e))
            continue
        rows.append(_check_row('increment_bound', rule.name, f"n={n}", violation, 1e-6,
                               violation <= 1e-6))
    return rows


def _loo_rows(config):
    rows = []
    for rule in config.sequences:
        for n in config.n_values:
            if n < 2:
                continue
            seen = set()
            try:
                seq = rule.build(n)
            except CASE_ERRORS as e:
                rows.append(_error_row('loo_score', rule.name, e))
                continue
            for k, spec in enumerate(seq.specs, 1):
                if spec in seen:
                    continue
                seen.add(spec)
                try:
                    check = stein.check_loo_score_bound(seq, k, config.grid)
                except (NonSmoothDensity, ScoreUndefined) as e:
                    logger.debug("leave-one-out check skipped for %s n=%d: %s", rule.name, n, e)
                    break
                except CASE_ERRORS as e:
                    logger.warning("leave-one-out check for %s n=%d failed: %s", rule.name, n, e)
                    rows.append(_error_row('loo_score', rule.name, e))
                    break
                detail = f"n={n} k={k}"
                rows.append(_check_row('loo_score', rule.name, detail, check.e_abs_rho,
                                       check.j_bound, check.holds))
                rows.append(_check_row('loo_fisher_chain', rule.name, detail, check.e_rho_sq,
                                       check.j_weighted, check.chain_holds))
    return rows


def check_identities(config: ExperimentConfig, include_loo=None) -> list:
    """Identity and inequality checks that do not depend on a particular bound case."""
    rows = []
    for spec in _distinct_bases(config):
        rows.extend(_spec_identity_rows(spec))
    rows.extend(_stein_rows(config))
    if config.checks.loo if include_loo is None else include_loo:
        rows.extend(_loo_rows(config))
    return rows


def _isolated(report, check, subject, fn, fallback=None):
    """fn(), or ``fallback`` with the error recorded against ``subject``."""
    try:
        return fn()
    except CASE_ERRORS as e:
        logger.warning("%s for %s failed: %s", check, subject, e)
        report.failures.append(CaseFailure(subject, None, type(e).__name__, str(e), check))
        return fallback


def _cor1_rows(config):
    rows = []
    eps_values = [e for e in config.epsilon_grid if e < 1.0]
    for rule in config.sequences:
        for n in config.n_values:
            worst = -math.inf
            holds = True
            try:
                seq = rule.build(n)
                for eps in eps_values:
                    dec = bounds.cor1_decomposition(seq, n, eps)
                    worst = max(worst, dec.m_n - dec.l_n_eps - eps)
                    holds = holds and dec.holds and dec.pieces_hold
            except CASE_ERRORS as e:
                logger.warning("M_n decomposition for %s n=%d failed: %s", rule.name, n, e)
                rows.append({'sequence': rule.name, 'n': n, 'eps_count': len(eps_values),
                             'max_excess': math.nan, 'holds': False,
                             'error': f"{type(e).__name__}: {e}"})
                continue
            rows.append({'sequence': rule.name, 'n': n, 'eps_count': len(eps_values),
                         'max_excess': worst, 'holds': holds})
    return rows


def _lindeberg_table(config, rule):
    seq = rule.build(max(config.n_values))
    rows = []
    for n in config.n_values:
        values = [metrics.lindeberg_functional(seq, n, eps) for eps in config.epsilon_grid]
        monotone = all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        rows.append({'n': n, 'eps': list(config.epsilon_grid), 'values': values,
                     'monotone': monotone})
    feller = [{'n': n, 'feller': metrics.feller_ratio(seq, n)} for n in config.n_values]
    return rows, feller


def _smoothing_scan(config, rule, n):
    seq = rule.build(n)
    smooth = all(s.smooth for s in seq.specs)
    deltas = list(config.delta_grid) if smooth else [d for d in config.delta_grid if d >= 0.1]
    rows = bounds.smoothing_stability(seq, n, deltas or list(config.delta_grid), config.grid)
    return {
        'n': n,
        'rows': [{'delta': r.delta, 'tv_bound': r.tv_bound, 'tv_actual': r.tv_actual}
                 for r in rows],
        'stable': bounds.smoothing_is_stable(rows) if smooth else None,
    }


def perturbation_demo(pc: PerturbationConfig, grid_cfg: GridConfig) -> dict:
    """Base law plus a matching-variance normal: J <= 2, TV decay, char-fn recovery, Lindeberg transfer."""
    n_max = max(pc.n_values)
    base = SumSequence((pc.base,) * n_max, 'perturbation')
    smoothed = bounds.matching_normal(base)
    j_value = dist.fisher_j(smoothed.specs[0])
    tv_rows = []
    for n in pc.n_values:
        report = bounds.evaluate(smoothed, n, grid_cfg, with_intermediate=False)
        tv_rows.append({'n': n, 'tv_actual': report.tv_actual, 'tv_bound': report.tv_bound})
    recovery = []
    for n in pc.n_values:
        for t in pc.t_values:
            r = bounds.char_fn_recovery(base, n, t, grid_cfg)
            recovery.append({'n': n, 't': t, 'recovered_re': r.recovered.real,
                             'recovered_im': r.recovered.imag, 'exact_re': r.exact.real,
                             'exact_im': r.exact.imag, 'gap': r.gap, 'to_normal': r.to_normal})
    transfer = []
    for n in pc.n_values:
        for eps in pc.epsilon_values:
            tr = bounds.lindeberg_transfer(base, n, eps)
            transfer.append({'n': n, 'eps': eps, 'smoothed': tr.smoothed, 'base': tr.base,
                             'noise': tr.noise, 'bound': tr.bound, 'holds': tr.holds})
    first, last = tv_rows[0]['tv_actual'], tv_rows[-1]['tv_actual']
    decay = first / last if last > 0 else math.inf
    # a sixteen-fold range of n must shrink d_TV at least DECAY_MIN times
    decay_floor = DECAY_MIN if n_max >= 16 * min(pc.n_values) else 1.0
    holds = (j_value <= 2.0 + 1e-6 and decay >= decay_floor
             and all(row['holds'] for row in transfer))
    return {'base': pc.base.label(), 'j': j_value, 'tv': tv_rows, 'decay_ratio': decay,
            'decay_floor': decay_floor,
            'recovery': recovery, 'transfer': transfer, 'holds': holds}


def _rates(config, cases):
    out = {}
    for rule in config.sequences:
        rows = [c for c in cases if c.sequence == rule.name and c.n >= 4]
        ns = [c.n for c in rows]
        out[rule.name] = {
            'tv_actual_slope': bounds.rate_slope(ns, [c.tv_actual for c in rows]),
            'tv_bound_slope': bounds.rate_slope(ns, [c.tv_bound for c in rows]),
        }
    return out


def _run_case(rule, n, config):
    seq = rule.build(n)
    return bounds.evaluate(seq, n, config.grid, with_intermediate=config.checks.intermediate)


def run(config: ExperimentConfig, on_case: Optional[Callable] = None) -> RunReport:
    """Every (sequence, n) case plus the configured check families."""
    started = time.perf_counter()
    report = RunReport(config=config.to_mapping())
    jobs = [(rule, n) for rule in config.sequences for n in config.n_values]

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        futures = {pool.submit(_run_case, rule, n, config): (rule.name, n) for rule, n in jobs}
        for future in as_completed(futures):
            name, n = futures[future]
            try:
                report.cases.append(future.result())
            except CASE_ERRORS as e:
                logger.warning("case %s n=%d failed: %s", name, n, e)
                report.failures.append(CaseFailure(name, n, type(e).__name__, str(e)))
            if on_case is not None:
                on_case(name, n)

    report.cases.sort(key=lambda c: (c.sequence, c.n))
    report.lindeberg, report.feller = {}, {}
    for rule in config.sequences:
        table = _isolated(report, 'lindeberg', rule.name, lambda: _lindeberg_table(config, rule))
        if table is not None:
            report.lindeberg[rule.name], report.feller[rule.name] = table
    report.rates = _rates(config, report.cases)

    if config.checks.identities:
        report.identities = _isolated(report, 'identities', config.name,
                                      lambda: check_identities(config), [])
    elif config.checks.loo:
        report.identities = _isolated(report, 'loo_score', config.name,
                                      lambda: _loo_rows(config), [])
    if config.checks.cor1:
        report.cor1 = _cor1_rows(config)
    smoothing_ns = [n for n in config.n_values if n >= 2]
    if config.checks.smoothing and smoothing_ns:
        for rule in config.sequences:
            scan = _isolated(report, 'smoothing', rule.name,
                             lambda: _smoothing_scan(config, rule, smoothing_ns[0]))
            if scan is not None:
                report.smoothing[rule.name] = scan
    if config.perturbation is not None:
        report.perturbation = _isolated(
            report, 'perturbation', config.perturbation.base.label(),
            lambda: perturbation_demo(config.perturbation, config.grid))
    report.failures.sort(key=lambda f: (f.sequence, f.check, f.n or 0))

    report.elapsed = time.perf_counter() - started
    logger.debug("run %s finished in %.1fs", config.name, report.elapsed)
    return report


def bound_table(config: ExperimentConfig, n: int) -> list:
    """(BoundReport, shape-only Kolmogorov bounds) per sequence at a single n."""
    for rule in config.sequences:
        if rule.max_n is not None and n > rule.max_n:
            raise ValidationError('n', f"sequence {rule.name!r} lists {rule.max_n} summands, "
                                       f"{n} requested")
    rows = []
    for rule in config.sequences:
        seq = rule.build(n)
        report = bounds.evaluate(seq, n, config.grid, with_intermediate=config.checks.intermediate)
        rows.append((report, bounds.kolmogorov_bounds(seq, n, config.c)))
    return rows
