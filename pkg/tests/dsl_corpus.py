"""Golden classification corpus: (query, expected class, expected plan when stale reads are allowed)."""

from __future__ import annotations

M, N = "Monotone", "NonMonotone"
LT, LB, CO = "LocalThreshold", "LocalLowerBound", "Coordinated"

EXAMPLE_2 = 'COUNT(FILTER(txns, type == "GIFTCARD" AND amount > 100)) > 50'
RATE_LIMITER = "PLUS(COUNT(actions.adds), COUNT(actions.removes)) > 100"
CART_CONTENTS = "EXCEPT(cart.adds, cart.removes)"

CORPUS: list[tuple[str, str, str]] = [
    (EXAMPLE_2, M, LT),
    (RATE_LIMITER, M, LT),
    (CART_CONTENTS, N, CO),
    ("txns", M, LB),
    ("cart.adds", M, LB),
    ("COUNT(txns)", M, LB),
    ("COUNT(txns) >= 3", M, LT),
    ("COUNT(txns) < 3", N, CO),
    ("COUNT(txns) <= 3", N, CO),
    ("COUNT(txns) == 3", N, CO),
    ('FILTER(txns, type == "CASH")', M, LB),
    ("FILTER(txns, amount < 10)", M, LB),
    ('FILTER(txns, type != "CASH")', M, LB),
    ("PROJECT(txns, type)", M, LB),
    ("COUNT(PROJECT(txns, type, amount)) > 2", M, LT),
    ("UNION(a, b)", M, LB),
    ("INTERSECT(a, b)", M, LB),
    ("COUNT(INTERSECT(a, b)) > 1", M, LT),
    ("COUNT(UNION(cart.adds, cart.removes)) > 4", M, LT),
    ("EXCEPT(a, b)", N, CO),
    ("COUNT(EXCEPT(a, b)) > 2", N, CO),
    ("UNION(a, EXCEPT(b, c))", N, CO),
    ("INTERSECT(FILTER(a, amount > 5), EXCEPT(c, b))", N, CO),
    ("PLUS(COUNT(a), COUNT(b)) < 7", N, CO),
    ("PLUS(COUNT(a), PLUS(COUNT(b), COUNT(c))) >= 5", M, LT),
    ("COUNT(FILTER(UNION(a, b), amount >= 3 AND amount <= 9)) > 1", M, LT),
]

# Syntactically non-monotone but semantically monotone: the classifier is
# sound, not complete, so these are flagged and coordinated needlessly.
# No counterexample exists for them.
CONSERVATIVE: list[str] = [
    "INTERSECT(FILTER(a, amount > 5), EXCEPT(b, a))",  # always empty
    "PLUS(COUNT(a), COUNT(EXCEPT(b, a))) > 2",  # same as COUNT(UNION(a, b)) > 2
]
