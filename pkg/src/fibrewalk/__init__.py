"""Exact conditional inference on contingency tables with dynamic Markov bases."""
