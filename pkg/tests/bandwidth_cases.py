"""Hand-derived bandwidth cases: (P_i, P_min, [(P_seis, compartment)], margin) -> advice, all in MPa."""

CASES = [
    # event near the initial pressure
    ((20, 2, [(18, False)], 1), ("A", 16, 18, 2, None)),
    # nothing reactivated during production
    ((20, 2, [], 1), ("NONE", 18, 20, 2, None)),
    # event at the production minimum on a compartment fault
    ((20, 2, [(2, True)], 1), ("B", 18, 20, 2, 18)),
    # tie: both bounds apply
    ((20, 2, [(11, False)], 1), ("A+B", 9, 11, 11, None)),
    ((20, 2, [(5, False)], 1), ("B", 15, 20, 5, None)),
    ((20, 2, [(15, True)], 1), ("A", 13, 15, 2, 5)),
    # two case A events: the lower one caps
    ((20, 2, [(17, False), (14, False)], 1), ("A", 12, 14, 2, None)),
    # one event of each kind
    ((20, 2, [(16, False), (4, False)], 1), ("A+B", 14, 16, 4, None)),
    ((20, 2, [(20, False)], 1), ("A", 18, 20, 2, None)),
    ((30, 10, [(12, True)], 1), ("B", 18, 30, 12, 18)),
    ((20, 2, [(18, False), (6, True)], 1), ("A+B", 14, 18, 6, 14)),
    # margin divides dP_max and the inter-block cap
    ((20, 2, [(18, True)], 2), ("A", 8, 18, 2, 1)),
]
