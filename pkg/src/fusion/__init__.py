"""Early-fusion networks, meta-models and the routed fusion pipeline"""
