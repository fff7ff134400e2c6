"""Training-free trajectory guidance for diffusion and flow samplers.

The package is organized around six concerns:

* :mod:`trajguide.schedules` / :mod:`trajguide.oracles` /
  :mod:`trajguide.samplers` - noise schedules, analytic denoiser oracles,
  and the deterministic DDIM / flow-Euler samplers, including the
  executable check that the two samplers agree under the shared linear
  parameterization.
* :mod:`trajguide.camera` / :mod:`trajguide.scene` /
  :mod:`trajguide.trajectories` / :mod:`trajguide.warping` - pinhole
  cameras, procedural scenes with exact depth, parametric camera paths,
  and forward depth warping with validity masks.
* :mod:`trajguide.flowscore` - dense per-channel optical flow and the
  masked flow-error metrics behind the channel similarity score.
* :mod:`trajguide.guidance` - recursive refinement, flow-gated fusion,
  and dual-path correction composed into a guided sampling loop.
* :mod:`trajguide.trajeval` - similarity alignment and trajectory
  accuracy metrics over pose files.
* :mod:`trajguide.harness` / :mod:`trajguide.cli` - the config-driven
  experiment runner and its command-line front end.
"""

__version__ = "0.1.0"

from .camera import CameraPose, look_at, pinhole_intrinsics
from .flowscore import (
    ChannelScore,
    FlowMetricConfig,
    channel_scores,
    estimate_flow,
    fl_all,
    masked_ae,
    masked_epe,
)
from .guidance import (
    GuidanceConfig,
    GuidanceTrace,
    dsg_correct,
    flf_select,
    flf_update,
    fuse_masked,
    guided_sample,
    irr_renoise,
)
from .oracles import (
    ConstantEps,
    DenoiserOracle,
    GaussianMixture,
    IsotropicGaussian,
    PredictionKind,
    TabulatedVideoTarget,
)
from .samplers import (
    SamplerState,
    cfg_combine,
    ddim_fm_equivalence_check,
    ddim_step,
    flow_euler_step,
    initial_state,
    predict_x0,
    run_chain,
)
from .scene import DepthMap, Plane, SceneSpec, Sphere, render, render_sequence
from .schedules import (
    DiscreteDdimSchedule,
    LinearFlowSchedule,
    NoiseSchedule,
    ddim_schedule_matching_flow,
    linear_flow_schedule,
)
from .trajectories import TrajectorySpec, make_trajectory
from .trajeval import (
    PoseTrajectory,
    Sim3Transform,
    align_sim3,
    ate,
    load_pose_file,
    rpe_r,
    rpe_t,
    save_pose_file,
)
from .warping import collapse_mask, embed_latent, orthogonal_channel_mix, warp, warp_sequence
