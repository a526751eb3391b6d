# beamgraph - Services Package
