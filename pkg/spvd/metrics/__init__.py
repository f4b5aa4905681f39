from spvd.metrics.assignment import (
    assignment_lower_bound,
    auction_assignment,
    solve_assignment,
)
from spvd.metrics.distances import (
    DistanceMatrix,
    chamfer,
    distance_matrix,
    emd,
    shape_distance,
)
from spvd.metrics.evaluation import (
    MetricReport,
    coverage,
    eval_report,
    mmd,
    one_nn_accuracy,
)
