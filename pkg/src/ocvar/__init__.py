"""Design-based variance estimation for linear treatment-effect estimators.

Core objects: randomization designs and their assignment distributions,
first/joint inclusion moments, the centered design kernel and its
conservative bound, generalized sandwich and fixed-center (OC) variance
estimators, a guaranteed conservative estimator, and a rerandomization
study harness.

Attributes resolve lazily so that thin clients (the CLI) can configure the
process, e.g. BLAS thread caps, before any numerical module loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "BoundedMatrix": "bounding",
    "BoundReport": "bounding",
    "amgm_bound": "bounding",
    "verify_bound": "bounding",
    "weight_by_p": "bounding",
    "GMatrix": "conservative",
    "g_bound": "conservative",
    "g_matrix": "conservative",
    "gc_estimate": "conservative",
    "gc_kernel": "conservative",
    "gc_mean": "conservative",
    "Assignment": "designs",
    "Design": "designs",
    "DesignDistribution": "designs",
    "draw_assignments": "designs",
    "enumerate_design": "designs",
    "expand_assignment": "designs",
    "sample_assignment": "designs",
    "support_size": "designs",
    "OcvarError": "errors",
    "EstimatorSpec": "estimators",
    "build_x": "estimators",
    "full_contrast": "estimators",
    "make_estimator": "estimators",
    "point_estimate": "estimators",
    "random_quantities": "estimators",
    "residual_maker": "estimators",
    "taylor_quantities": "estimators",
    "w_ht": "estimators",
    "w_mean": "estimators",
    "w_realized": "estimators",
    "w_wls": "estimators",
    "w_wls_bar": "estimators",
    "Dataset": "harness",
    "StudyConfig": "harness",
    "StudyResult": "harness",
    "center_midpoint": "harness",
    "impute_sharp_null": "harness",
    "ingest_csv": "harness",
    "mean_impute": "harness",
    "run_study": "harness",
    "synthetic_paluck_green": "harness",
    "DesignMatrix": "kernel",
    "FirstOrderProbs": "kernel",
    "JointProbs": "kernel",
    "compute_d": "kernel",
    "compute_p": "kernel",
    "compute_pi": "kernel",
    "safe_divide": "kernel",
    "MomentTensor": "oc",
    "SpectralSplit": "oc",
    "bbar_mean": "oc",
    "bias_estimate": "oc",
    "bias_kernels": "oc",
    "oc0": "oc",
    "oc1": "oc",
    "oc2": "oc",
    "q_from_mean": "oc",
    "series_closed_form": "oc",
    "spectral_split": "oc",
    "tensor_b": "oc",
    "compare_gs_oc2": "precision",
    "var_of_varest": "precision",
    "var_of_varest_tensor": "precision",
    "GsKernel": "sandwich",
    "build_gs_kernel": "sandwich",
    "gs_estimate": "sandwich",
    "hc_refinement": "sandwich",
    "o0_matrix": "sandwich",
    "o0_mean": "sandwich",
    "robust_variance": "sandwich",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    try:
        module_name = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    module = importlib.import_module(f".{module_name}", __name__)
    value = getattr(module, name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
