"""Domain logic: linear algebra, propensity networks, scores, matching, metrics and bounds."""
