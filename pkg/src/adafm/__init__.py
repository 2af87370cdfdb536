"""Data acquisition, dataset assembly and the command line for adaptive feature modelling."""
