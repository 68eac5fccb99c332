"""Non-contact fluid pushing on a synthetic desk-scale rig.

A spinning robot drags the surrounding fluid and pushes a nearby object
without touching it. This package provides the synthetic plant, the
radial-basis model of the distance-dependent coupling, a constrained
convex-optimal tracking controller with online weight adaptation, and a
curvature-aware tree planner, plus the experiment harness tying them
together.
"""

from .geometry import CONTACT_S_R, SystemState, local_frame, normalized_distance, relative, vec2
from .plant import (DataTuple, MobilityCurve, Plant, PlantConfig, RollingParams,
                    collect_dataset, ground_truth_g, load_dataset, save_dataset,
                    steady_state_1d)
from .rbfn import (RbfnModel, TrainConfig, activation, load_model, predict_g,
                   predict_velocity, save_model, test_error, train_offline)
from .controller import (ControllerParams, QpProblem, build_qp, ideal_velocities,
                         online_update, p_controller_baseline, solve_qp, task_errors,
                         track)
from .planner import (BezierPath, NoPathError, PlannedPath, RrtParams, World,
                      bezier_smooth, bernstein, co_rrt_distance, max_curvature,
                      plan_co_rrt, plan_rrt, turning_angle)

__version__ = "0.1.0"
