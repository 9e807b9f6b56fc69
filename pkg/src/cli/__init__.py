"""Command-line interface: generate, featurize, train, eval, predict, report"""
