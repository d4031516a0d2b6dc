"""Python access to the nca-scope core: persistence, PCA, sparse autoencoders,
trajectories and experiment recipes."""

from ._core import (
    CapacityError,
    ConfigError,
    ContractError,
    Error,
    FormatError,
    PcaBasis,
    __version__,
    betti,
    load_trajectory,
    macro_cloud,
    maxmin_subsample,
    micro_cloud,
    pca_fit,
    ph_coverage,
    principal_angles,
    recipe,
    recipe_names,
    rips_persistence,
    rollout,
    run_experiment,
    sae_fit,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
