import math
from typing import Any, Dict, Tuple

DOMAIN_KINDS = ['torus', 'interval']
RHO_PRESETS = ['uniform', 'cosine', 'exp-tilt', 'custom']
F0_PRESETS = ['steady', 'sine', 'spike', 'custom', 'random']
SOLVER_KINDS = ['jko', 'pde']
PDE_SCHEMES = ['implicit', 'explicit']
SCENARIOS = ['jko', 'pde', 'cross_validation', 'harnack', 'stability']
KNOWN_CHECKS = ['mass', 'energy', 'stationary', 'max_principle', 'bv', 'lq_monotone', 'harnack',
                'convergence', 'cross_validation', 'stability']


def validate_positive_number(value, name, allow_zero=False):
    """Validate a finite positive (or nonnegative) number"""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False, f"{name} must be a number"
    if not math.isfinite(value):
        return False, f"{name} must be finite"
    if value < 0 or (value == 0 and not allow_zero):
        return False, f"{name} must be {'nonnegative' if allow_zero else 'positive'}"
    return True, f"Valid {name}"


def validate_integer(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        return False, f"{name} must be an integer"
    if minimum is not None and value < minimum:
        return False, f"{name} must be at least {minimum}"
    return True, f"Valid {name}"


def validate_required_fields(data, required_fields):
    """Validate that all required fields are present and not empty"""
    if not isinstance(data, dict):
        return False, "Data must be a dictionary"

    missing_fields = [field for field in required_fields if field not in data]
    empty_fields = [field for field in required_fields if field in data and data[field] in (None, '', {}, [])]

    if missing_fields:
        return False, f"Missing required fields: {', '.join(missing_fields)}"

    if empty_fields:
        return False, f"Empty required fields: {', '.join(empty_fields)}"

    return True, "All required fields are valid"


def validate_domain_spec(spec):
    """Validate {'kind': 'torus', 'length': L} or {'kind': 'interval', 'a': a, 'b': b}"""
    is_valid, message = validate_required_fields(spec, ['kind'])
    if not is_valid:
        return False, f"domain: {message}"
    kind = spec['kind']
    if kind not in DOMAIN_KINDS:
        return False, f"Invalid domain kind. Valid kinds: {', '.join(DOMAIN_KINDS)}"
    if kind == 'torus':
        return validate_positive_number(spec.get('length', 1.0), 'domain.length')
    a, b = spec.get('a', 0.0), spec.get('b', 1.0)
    for name, value in (('domain.a', a), ('domain.b', b)):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            return False, f"{name} must be a finite number"
    if not b > a:
        return False, "domain needs a < b"
    return True, "Valid domain"


def validate_rho_spec(spec):
    """Validate a weight preset"""
    is_valid, message = validate_required_fields(spec, ['preset'])
    if not is_valid:
        return False, f"rho: {message}"
    preset = spec['preset']
    if preset not in RHO_PRESETS:
        return False, f"Invalid rho preset. Valid presets: {', '.join(RHO_PRESETS)}"
    if preset == 'cosine':
        amplitude = spec.get('amplitude', 0.25)
        is_valid, message = validate_positive_number(amplitude, 'rho.amplitude', allow_zero=True)
        if not is_valid:
            return False, message
        if amplitude >= 0.5:
            return False, "rho.amplitude must be below 0.5"
    if preset == 'exp-tilt':
        slope = spec.get('slope', 1.0)
        if isinstance(slope, bool) or not isinstance(slope, (int, float)) or not math.isfinite(slope):
            return False, "rho.slope must be a finite number"
    if preset == 'custom' and not spec.get('path'):
        return False, "rho preset 'custom' needs a CSV path"
    return True, "Valid rho"


def validate_f0_spec(spec):
    """Validate an initial-datum preset"""
    is_valid, message = validate_required_fields(spec, ['preset'])
    if not is_valid:
        return False, f"f0: {message}"
    preset = spec['preset']
    if preset not in F0_PRESETS:
        return False, f"Invalid f0 preset. Valid presets: {', '.join(F0_PRESETS)}"
    for key in ('mass', 'height', 'width', 'floor'):
        if key in spec:
            is_valid, message = validate_positive_number(spec[key], f"f0.{key}")
            if not is_valid:
                return False, message
    if preset == 'sine' and abs(spec.get('amplitude', 0.3)) >= 1:
        return False, "f0.amplitude must be below 1 in absolute value"
    if preset == 'random' and not 0 < spec.get('spread', 0.5) < 1:
        return False, "f0.spread must lie in (0, 1)"
    if preset == 'custom' and not spec.get('path'):
        return False, "f0 preset 'custom' needs a CSV path"
    return True, "Valid f0"


def validate_solver_spec(spec):
    """Validate solver choice and its step parameter"""
    is_valid, message = validate_required_fields(spec, ['kind'])
    if not is_valid:
        return False, f"solver: {message}"
    kind = spec['kind']
    if kind not in SOLVER_KINDS:
        return False, f"Invalid solver. Valid solvers: {', '.join(SOLVER_KINDS)}"
    step_key = 'tau' if kind == 'jko' else 'dt'
    if step_key not in spec:
        return False, f"solver '{kind}' needs '{step_key}'"
    is_valid, message = validate_positive_number(spec[step_key], f"solver.{step_key}")
    if not is_valid:
        return False, message
    if kind == 'pde' and spec.get('scheme', 'implicit') not in PDE_SCHEMES:
        return False, f"Invalid scheme. Valid schemes: {', '.join(PDE_SCHEMES)}"
    return True, "Valid solver"


def validate_experiment_dict(data: Dict[str, Any]) -> Tuple[bool, str]:
    """Run every validator on a parsed experiment config; report the first failure"""
    is_valid, message = validate_required_fields(
        data, ['domain', 'n', 'r', 'rho', 'f0', 'solver', 'horizon'])
    if not is_valid:
        return False, message

    version = data.get('schema_version', 1)
    if version != 1:
        return False, f"Unsupported schema_version {version}"
    if data.get('scenario', 'jko') not in SCENARIOS:
        return False, f"Invalid scenario. Valid scenarios: {', '.join(SCENARIOS)}"

    checks = [
        validate_domain_spec(data['domain']),
        validate_integer(data['n'], 'n', minimum=2),
        validate_positive_number(data['r'], 'r'),
        validate_rho_spec(data['rho']),
        validate_f0_spec(data['f0']),
        validate_solver_spec(data['solver']),
        validate_positive_number(data['horizon'], 'horizon', allow_zero=True),
        validate_integer(data.get('seed', 0), 'seed', minimum=0),
        validate_integer(data.get('stride', 1), 'stride', minimum=1),
    ]
    if data.get('Lambda') is not None:
        lam = data['Lambda']
        if isinstance(lam, bool) or not isinstance(lam, (int, float)) or not math.isfinite(lam):
            checks.append((False, "Lambda must be a finite number"))
    for tau in data.get('tau_list', []):
        checks.append(validate_positive_number(tau, 'tau_list entry'))
    for q in data.get('q_list', []):
        if isinstance(q, bool) or not isinstance(q, (int, float)) or 0 <= q <= 1:
            checks.append((False, f"q_list entry {q} must be a number outside [0, 1]"))
    unknown_checks = [c for c in data.get('checks', []) if c not in KNOWN_CHECKS]
    if unknown_checks:
        checks.append((False, f"Unknown checks: {', '.join(unknown_checks)}"))
    if data.get('scenario') == 'cross_validation' and len(data.get('tau_list', [])) < 2:
        checks.append((False, "cross_validation needs at least two tau values"))

    for is_valid, message in checks:
        if not is_valid:
            return False, message
    return True, "Valid experiment config"

