"""
Flask service exposing the online safety filters to an out-of-process learner
"""
import logging
import os

import numpy as np
from flask import Flask, current_app, jsonify, request

from analytics import family_statistics
from config import build_model, load_config
from explicit_filter import containing_sets, explicit_step
from implicit_filter import implicit_step
from models import (
    ConfigError, FilterKind, MembershipMode, SafetyFault, SafetyFrameworkError, SolverError, SolveStatus, Tolerances,
    __version__,
)
from synthesis import check_fingerprint, load_family

logger = logging.getLogger(__name__)

app = Flask(__name__)

# Initialize default configuration; paths come from the environment in deployment
app.config['FILTER_CONFIG'] = {
    'config_path': os.environ.get('SAFESET_CONFIG'),
    'family_path': os.environ.get('SAFESET_FAMILY'),
    'filter': FilterKind.EXPLICIT.value,
    'membership': MembershipMode.GLOBAL_SUM.value,
}
app.config['MODEL'] = None
app.config['FAMILY'] = None
app.config['TOLERANCES'] = Tolerances()


def load_state(flask_app: Flask):
    """Populate MODEL, FAMILY and TOLERANCES from the configured paths"""
    settings = flask_app.config['FILTER_CONFIG']
    if settings.get('config_path'):
        config = load_config(settings['config_path'])
        flask_app.config['MODEL'] = build_model(config)
        flask_app.config['TOLERANCES'] = config.tolerance_set()
        settings['filter'] = config.filter
        settings['membership'] = config.membership
    if settings.get('family_path') and flask_app.config['MODEL'] is not None:
        if not os.path.isfile(settings['family_path']):
            # explicit requests answer 400 until `main.py synthesize` writes the family
            logger.warning("Family file %s not found, serving the model without certified sets",
                           settings['family_path'])
            return
        flask_app.config['FAMILY'] = load_family(settings['family_path'], flask_app.config['MODEL'])


def bad_request(message: str):
    return jsonify({'error': message}), 400


def parse_vector(payload: dict, key: str, size: int) -> np.ndarray:
    if key not in payload:
        raise ValueError(f"missing field {key!r}")
    try:
        vector = np.asarray(payload[key], dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ValueError(f"field {key!r} must be a list of numbers") from None
    if vector.size != size or not np.all(np.isfinite(vector)):
        raise ValueError(f"field {key!r} needs {size} finite numbers, got {vector.size}")
    return vector


@app.route('/')
def index():
    """Service status"""
    model = current_app.config['MODEL']
    family = current_app.config['FAMILY']
    return jsonify({
        'service': 'safety-filter',
        'code_version': __version__,
        'ready': model is not None,
        'model': None if model is None else {'name': model.name, 'agents': model.N, 'fingerprint': model.fingerprint()},
        'certified_sets': 0 if family is None else len(family),
        'filter': current_app.config['FILTER_CONFIG']['filter'],
        'membership': current_app.config['FILTER_CONFIG']['membership'],
    })


@app.route('/api/family')
def api_family():
    """Statistics of the loaded certified set family"""
    family = current_app.config['FAMILY']
    if family is None:
        return jsonify({'error': 'no certified set family loaded'}), 404
    return jsonify(family_statistics(family))


@app.route('/api/filter', methods=['POST'])
def api_filter():
    """Filter one learning input"""
    model = current_app.config['MODEL']
    if model is None:
        return jsonify({'error': 'no model configured'}), 503
    payload = request.get_json(silent=True)
    if not isinstance(payload, dict):
        return bad_request('request body must be a JSON object')

    settings = current_app.config['FILTER_CONFIG']
    try:
        x = parse_vector(payload, 'x', model.n)
        u_learning = parse_vector(payload, 'u_learning', model.m)
        kind = FilterKind(payload.get('filter', settings['filter']))
        membership = MembershipMode(payload.get('membership', settings['membership']))
        k = int(payload.get('k', 0))
    except ValueError as e:
        return bad_request(str(e))
    tolerances = current_app.config['TOLERANCES']
    family = current_app.config['FAMILY']

    try:
        if kind == FilterKind.IMPLICIT:
            decision = implicit_step(model, x, u_learning, membership, tolerances)
            body = dict(decision.to_dict(), filter=kind.value)
            if decision.status == SolveStatus.INFEASIBLE:
                return jsonify(dict(body, error='no certified input exists at this state',
                                    fault='state-outside-certified-sets')), 409
            return jsonify(body)
        if kind == FilterKind.EXPLICIT:
            if family is None:
                return bad_request('the explicit filter needs a certified set family')
            check_fingerprint(family, model)
            decision = explicit_step(model, family, x, u_learning, k, membership, tolerances,
                                     check=False)
            return jsonify(dict(decision.to_dict(), filter=kind.value,
                                containing_sets=containing_sets(family, model, x)))
        return jsonify({'filter': kind.value, 'u_learning': u_learning.tolist(), 'u_applied': u_learning.tolist(),
                        'intervened': False})
    except SafetyFault as e:
        return jsonify({'error': str(e), 'fault': 'state-outside-certified-sets'}), 409
    except SolverError as e:
        logger.error("Solver failure while filtering: %s", e)
        return jsonify({'error': str(e), 'label': e.label}), 500
    except SafetyFrameworkError as e:
        return jsonify({'error': str(e)}), 500


if __name__ == '__main__':
    # Get port from environment variable (Cloud Foundry) or default to 5000
    port = int(os.environ.get('PORT', 5000))
    logging.basicConfig(level=logging.INFO)

    print("\n" + "=" * 80)
    print("DISTRIBUTED SAFETY FILTER SERVICE")
    print("=" * 80)
    try:
        load_state(app)
    except (ConfigError, SafetyFrameworkError) as e:
        print(f"\n⚠ Could not load model or family: {e}")
    print(f"\nPort: {port}")
    print("=" * 80 + "\n")

    # Disable debug mode in production
    debug_mode = os.environ.get('FLASK_ENV', 'development') == 'development'

    app.run(debug=debug_mode, host='0.0.0.0', port=port)
