"""Pilot-assisted joint channel estimation and data recovery for mmWave massive MIMO."""
