# apsde: almost periodicity checks for linear stochastic differential equations
