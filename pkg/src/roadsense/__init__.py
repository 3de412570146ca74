"""Collaborative road-profile estimation with DOB and cascaded ILC."""
