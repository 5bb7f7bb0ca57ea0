# Run configuration, dispatch and persistence for the command line
