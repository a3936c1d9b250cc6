# EdgeTracer source modules
