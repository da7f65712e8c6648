"""Source detection with false-cluster-proportion control.

Detections are connected components of an image level set; the threshold is
chosen so that, with confidence 1 - alpha, at most a proportion c of the
reported clusters are false. The guarantee comes from a Monte-Carlo
confidence superset of the source-free region, calibrated under a noise
model that mirrors the exact transform pipeline applied to the data. A
multi-scale derivative statistic handles sources of varying size, and the
same control carries over to irregular point clouds.
"""

from .errors import (
    CapacityError,
    DomainError,
    EnvelopeUndefined,
    FcpError,
    ModelError,
    ParameterError,
    ParseError,
    StructuralError,
    TableLookupError,
)
from .grid import FORMATS, as_grid, as_mask, load_image, save_image
from .transforms import estimate_background, gaussian_smooth, sqrt_transform, z_score
from .msd import detection_statistic, msd_image, msd_kernel, msd_response
from .noise import (
    ConfidenceSuperset,
    Filtered,
    GaussianField,
    MaxDistributionTable,
    Msd,
    Negate,
    PoissonField,
    Smooth,
    Sqrt,
    ZScore,
    build_max_distributions,
    build_square_region_maxima,
    child_seed,
    empirical_pvalue,
    load_table,
    max_percentile,
    model_descriptor,
    model_from_dict,
    model_to_dict,
    removal_maxima,
    save_table,
    simulate_noise_image,
    superset_alg1,
    superset_alg2,
)
from .clusters import (
    Cluster,
    ClusterSet,
    FcpResult,
    clusters_at,
    connected_components,
    envelope,
    find_threshold,
    level_set,
    true_fcp,
    write_envelope_csv,
    write_result_json,
)
from .graph import (
    ClassLabeling,
    LocationSet,
    classify_phase,
    conservative_superset,
    graph_components,
    graph_find_threshold,
    read_locations,
    superset_threshold,
    write_locations,
)
from .pipeline import (
    Catalog,
    EvaluationReport,
    RunConfig,
    SyntheticSky,
    evaluate,
    run,
    run_fcp_z,
    run_msfcp,
    synth_sky,
    write_catalog_csv,
    write_metadata_json,
)

__version__ = "0.1.0"
