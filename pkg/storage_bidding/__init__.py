"""Strategic storage bidding: market model, reductions and solvers."""
