# beamgraph - Source Package
