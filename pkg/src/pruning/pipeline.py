"""Sequential bottom-up pruning of several layers."""
from dataclasses import dataclass

from src.data.sampling import build_data_matrix
from src.errors import DomainError
from src.pruning.fold import PruneSpec, prune_layer
from src.pruning.select import importance_report, solve_group_sparse
from src.utils.logging import log_info


@dataclass
class LayerOutcome:
    report: object
    result: object
    data: object


def plan_order(graph, plan):
    """Sort (layer, K) pairs from input to output"""
    names = [name for name, _ in plan]
    if len(set(names)) != len(names):
        raise DomainError(f"layers listed more than once: {names}")
    return sorted(plan, key=lambda item: graph.index(item[0]))


def prune_bottom_up(graph, plan, images, n_sample, seed, cfg=None, mode="bottom", rank=None):
    """Prune every (layer, K) in ``plan``, lowest layer first.

    Activations are recaptured from the current, already pruned model
    before each layer. ``rank`` maps a DataMatrix to an ImportanceReport and
    defaults to the group-sparse solver.
    """
    if rank is None:
        def rank(data):
            return importance_report(solve_group_sparse(data, cfg), data.layer)

    outcomes = []
    model = graph
    for name, k in plan_order(graph, plan):
        data = build_data_matrix(model, name, images, n_sample, seed)
        report = rank(data)
        result = prune_layer(model, PruneSpec(name, k, mode, report), data)
        model = result.model
        outcomes.append(LayerOutcome(report, result, data))
    log_info(f"Pruned {len(outcomes)} layers bottom-up")
    return model, outcomes
