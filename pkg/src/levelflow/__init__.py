"""Gradient-flow transport of level surfaces and the coarea formula."""
