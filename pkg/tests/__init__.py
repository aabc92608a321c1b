"""Tests package for rail_defect_fusion."""
