"""Space-mapping receding-horizon control of stochastic sheep herds by dogs."""
