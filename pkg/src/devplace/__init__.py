"""Learned device placement for computation graphs.

Pipeline: load or generate a computation graph, coalesce it into co-location
groups, then place the groups on a device topology either with the
policy-gradient-trained sequence policy (:mod:`devplace.trainer`) or with the
classical baselines (:mod:`devplace.baselines`); the event-driven simulator
(:mod:`devplace.simulator`) scores every placement.
"""

from .baselines import (NoFeasiblePlacement, SearchSpaceTooLarge, brute_force,
                        place_expert_contiguous, place_mincut,
                        place_random_search, place_single)
from .generators import FAMILIES, GeneratorSpec, expected_group_count, generate
from .graph import (ComputationGraph, CycleError, Edge, GraphError, Group,
                    GroupedGraph, GroupEdge, Operation, coalesce_sole_consumers,
                    graph_from_dict, graph_to_dict, load_graph, save_graph,
                    singleton_groups, topo_order)
from .harness import ExperimentResult, ExperimentRow, make_strategy, run_experiment
from .policy import (EmbeddingSpec, GroupFeatures, PolicyParams, SampledPlacement,
                     embed_groups, forward_sample, grad_log_prob, load_checkpoint,
                     log_prob_of, save_checkpoint, step_distributions)
from .simulator import (INFEASIBLE, Device, DeviceTopology, NoiseSpec, SimReport,
                        TopologyError, check_memory, default_topology,
                        load_topology, measure, save_topology, simulate,
                        topology_from_dict, topology_to_dict)
from .trainer import (BaselineState, LogRow, ParameterStore, RewardSpec,
                      TrainerConfig, TrainResult, apply_adam, log_to_csv,
                      reinforce_update, reward_of, run_controller,
                      suggest_failing_signal, train)

__version__ = "0.1.0"
