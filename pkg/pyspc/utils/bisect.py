import logging

logger = logging.getLogger(__name__)


class BisectionError(ValueError):
    pass


def bisect_largest_feasible(
    is_feasible, lower, upper, epsilon, name="value", error_on_infeasible=True
):
    """Find the largest value in [lower, upper] for which `is_feasible` holds.

    The feasible region is assumed to be an interval starting at `lower`. The
    bisection proceeds until the bracket is narrower than `epsilon`.

    Parameters
    ==========
    is_feasible : callable
        Called with a single float; returns True when the value satisfies all constraints.
    lower, upper : float
        Bounds of the search space.
    epsilon : float
        The termination criterion for the bisection process.
    name : str
        Used in log messages.
    error_on_infeasible : bool (default True)
        If true a `BisectionError` is raised if no feasible value is found. If false the
        lower bound is returned instead.
    """
    if lower >= upper:
        raise BisectionError(
            "Upper bound of the bisection must be strictly greater than its lower bound."
        )
    if epsilon <= 0.0:
        raise BisectionError("Bisection epsilon value must be greater than zero.")

    logger.debug(
        f'Starting bisection on "{name}" over [{lower:.4f}, {upper:.4f}] with epsilon of '
        f"{epsilon:.4g}."
    )

    best_feasible = None
    if is_feasible(lower):
        best_feasible = lower
    else:
        # Nothing larger can be feasible when the interval starts at lower.
        upper = lower

    while (upper - lower) > epsilon:
        current_value = (upper + lower) / 2
        logger.debug(
            f"Bisection step with value: {current_value:.4f}; "
            f"bounds [{lower:.4f}, {upper:.4f}]"
        )
        if is_feasible(current_value):
            lower = current_value
            best_feasible = current_value
        else:
            upper = current_value

    if best_feasible is None:
        if error_on_infeasible:
            raise BisectionError(
                f'No feasible value of "{name}" found during bisection.'
            )
        best_feasible = lower

    logger.debug(f'Bisection complete; largest feasible "{name}" is {best_feasible:.6g}.')
    return best_feasible


def bisect_smallest_feasible(is_feasible, lower, upper, epsilon, name="value", **kwargs):
    """Find the smallest value in [lower, upper] for which `is_feasible` holds.

    The mirror image of `bisect_largest_feasible`: the feasible region must be an
    interval ending at `upper`.
    """
    value = bisect_largest_feasible(
        lambda x: is_feasible(-x), -upper, -lower, epsilon, name=name, **kwargs
    )
    return -value
