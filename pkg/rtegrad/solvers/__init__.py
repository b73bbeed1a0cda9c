"""Forward solvers and gradient estimators."""
